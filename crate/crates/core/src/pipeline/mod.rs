//! Recording preparation: filtering, epoching, labeling, splitting, synthetic
//! data and the epoch file format.

mod epoch_file;
mod filter;
mod split;
mod synth;

use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use epoch_file::{
    decode_epochs, encode_epochs, manifest_path, read_epochs, write_epochs, EPOCH_MAGIC,
    EPOCH_VERSION,
};
pub use filter::{
    filter_and_decimate, fir_bandpass, frequency_response, DEFAULT_BAND, DEFAULT_TAPS,
};
pub use split::{stratified_holdout, stratified_kfold, stratified_split, FoldPlan, SplitSpec};
pub use synth::{synth_generate, SynthConfig, POSTERIOR_CHANNELS};

/// PERCLOS at or above this value is labeled drowsy.
pub const DROWSY_THRESHOLD: f64 = 0.5;

/// A continuous multi-channel recording with its PERCLOS trace.
#[derive(Clone, Debug, PartialEq)]
pub struct RawRecording {
    pub fs_hz: u32,
    pub channels: Vec<String>,
    /// `[C, n]`, channel-major.
    pub samples: Tensor,
    /// `(time in seconds, value in [0,1])`, sorted by time.
    pub perclos: Vec<(f64, f64)>,
}

impl RawRecording {
    pub fn new(
        fs_hz: u32,
        channels: Vec<String>,
        samples: Tensor,
        perclos: Vec<(f64, f64)>,
    ) -> Result<Self> {
        let rec = RawRecording {
            fs_hz,
            channels,
            samples,
            perclos,
        };
        rec.validate()?;
        Ok(rec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.fs_hz == 0 {
            return Err(Error::invalid("sampling rate must be positive"));
        }
        if self.samples.rank() != 2 || self.samples.shape()[0] != self.channels.len() {
            return Err(Error::shape(format!(
                "samples must be [{}, n], got {:?}",
                self.channels.len(),
                self.samples.shape()
            )));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = self.channels.iter().find(|c| !seen.insert(c.as_str())) {
            return Err(Error::invalid(format!("duplicate channel label {dup:?}")));
        }
        if let Some(&(t, v)) = self.perclos.iter().find(|(_, v)| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid(format!(
                "PERCLOS value {v} at {t}s is outside [0,1]"
            )));
        }
        if self.perclos.windows(2).any(|w| w[1].0 < w[0].0) {
            return Err(Error::invalid("PERCLOS timestamps must be sorted"));
        }
        Ok(())
    }

    pub fn n_samples(&self) -> usize {
        self.samples.shape()[1]
    }

    /// Imports a headerless channel-major little-endian `f32` dump of `channels` rows.
    pub fn from_f32_le(
        fs_hz: u32,
        channels: Vec<String>,
        bytes: &[u8],
        perclos: Vec<(f64, f64)>,
    ) -> Result<Self> {
        let c = channels.len();
        if c == 0 || !bytes.len().is_multiple_of(4 * c) {
            return Err(Error::invalid(format!(
                "{} bytes do not hold whole f32 frames for {c} channels",
                bytes.len()
            )));
        }
        let data = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
            .collect::<Vec<_>>();
        let n = data.len() / c;
        Self::new(fs_hz, channels, Tensor::new([c, n], data)?, perclos)
    }
}

/// Labeled fixed-length epochs `[n, 1, C, T]`.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochSet {
    pub epochs: Tensor,
    pub labels: Vec<usize>,
    pub fs_hz: u32,
    pub provenance: String,
}

impl EpochSet {
    pub fn new(
        epochs: Tensor,
        labels: Vec<usize>,
        fs_hz: u32,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        let s = epochs.shape();
        if s.len() != 4 || s[1] != 1 {
            return Err(Error::shape(format!("epochs must be [n,1,C,T], got {s:?}")));
        }
        if labels.len() != s[0] {
            return Err(Error::shape(format!(
                "{} labels for {} epochs",
                labels.len(),
                s[0]
            )));
        }
        if fs_hz == 0 {
            return Err(Error::invalid("sampling rate must be positive"));
        }
        Ok(EpochSet {
            epochs,
            labels,
            fs_hz,
            provenance: provenance.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.epochs.shape()[2]
    }

    pub fn samples(&self) -> usize {
        self.epochs.shape()[3]
    }

    /// Number of epochs per label value, up to the largest label present.
    pub fn class_counts(&self) -> Vec<usize> {
        class_counts(&self.labels)
    }

    /// The epochs at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<EpochSet> {
        let epochs = self.epochs.select_rows(indices)?;
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        EpochSet::new(epochs, labels, self.fs_hz, self.provenance.clone())
    }
}

pub fn class_counts(labels: &[usize]) -> Vec<usize> {
    let n = labels.iter().max().map_or(0, |m| m + 1);
    let mut counts = vec![0; n];
    for &l in labels {
        counts[l] += 1;
    }
    counts
}

/// Windows cut from a recording, before labeling.
#[derive(Clone, Debug, PartialEq)]
pub struct Epochs {
    /// `[n, 1, C, T]`
    pub epochs: Tensor,
    /// PERCLOS at each epoch's midpoint.
    pub perclos: Vec<f64>,
}

/// Cuts non-overlapping windows of `len_s` seconds. The remainder is dropped.
/// Each window takes the PERCLOS sample nearest its midpoint; an exact tie goes
/// to the earlier sample.
pub fn epoch(rec: &RawRecording, len_s: u32) -> Result<Epochs> {
    rec.validate()?;
    let t = (rec.fs_hz * len_s) as usize;
    let (c, n) = (rec.samples.shape()[0], rec.n_samples());
    if t == 0 || n < t {
        return Err(Error::invalid(format!(
            "recording of {n} samples is shorter than one {t}-sample epoch"
        )));
    }
    if rec.perclos.is_empty() {
        return Err(Error::invalid("recording has no PERCLOS samples"));
    }
    let count = n / t;
    let src = rec.samples.data();
    let mut data = Vec::with_capacity(count * c * t);
    let mut perclos = Vec::with_capacity(count);
    for e in 0..count {
        for ch in 0..c {
            data.extend_from_slice(&src[ch * n + e * t..ch * n + (e + 1) * t]);
        }
        let mid = (e * t) as f64 / rec.fs_hz as f64 + len_s as f64 / 2.0;
        perclos.push(nearest(&rec.perclos, mid));
    }
    Ok(Epochs {
        epochs: Tensor::new([count, 1, c, t], data)?,
        perclos,
    })
}

fn nearest(series: &[(f64, f64)], time: f64) -> f64 {
    let i = series.partition_point(|&(ts, _)| ts < time);
    match (i.checked_sub(1).map(|j| series[j]), series.get(i)) {
        (Some(a), Some(b)) => {
            if time - a.0 <= b.0 - time {
                a.1
            } else {
                b.1
            }
        }
        (Some(a), None) => a.1,
        (None, Some(b)) => b.1,
        (None, None) => unreachable!("series is non-empty"),
    }
}

/// `1` (drowsy) when the value is at least [`DROWSY_THRESHOLD`], else `0` (awake).
pub fn perclos_to_labels(perclos: &[f64]) -> Result<Vec<usize>> {
    perclos
        .iter()
        .map(|&v| {
            if !(0.0..=1.0).contains(&v) {
                Err(Error::invalid(format!(
                    "PERCLOS value {v} is outside [0,1]"
                )))
            } else {
                Ok(usize::from(v >= DROWSY_THRESHOLD))
            }
        })
        .collect()
}

/// Filter, decimate, epoch and label a raw recording.
pub fn preprocess(rec: &RawRecording, taps: &[f64], factor: usize) -> Result<EpochSet> {
    let filtered = filter_and_decimate(rec, taps, factor)?;
    let cut = epoch(&filtered, 1)?;
    let labels = perclos_to_labels(&cut.perclos)?;
    let provenance = format!(
        "raw {} Hz, {} channels, {} samples; fir {} taps; decimate x{factor}; 1 s epochs; perclos >= {DROWSY_THRESHOLD}",
        rec.fs_hz,
        rec.channels.len(),
        rec.n_samples(),
        taps.len()
    );
    EpochSet::new(cut.epochs, labels, filtered.fs_hz, provenance)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(n: usize) -> RawRecording {
        let data = (0..2 * n).map(|v| v as f64).collect();
        RawRecording::new(
            200,
            vec!["O1".into(), "O2".into()],
            Tensor::new([2, n], data).unwrap(),
            vec![(0.0, 0.1), (1.0, 0.9), (2.0, 0.5)],
        )
        .unwrap()
    }

    #[test]
    fn labels_threshold_inclusive() {
        assert_eq!(perclos_to_labels(&[0.49, 0.51]).unwrap(), vec![0, 1]);
        assert_eq!(perclos_to_labels(&[0.5]).unwrap(), vec![1]);
        assert_eq!(perclos_to_labels(&[0.0, 0.5, 1.0]).unwrap(), vec![0, 1, 1]);
        assert!(perclos_to_labels(&[1.2]).is_err());
        assert!(perclos_to_labels(&[-0.1]).is_err());
    }

    #[test]
    fn epoch_drops_remainder() {
        let e = epoch(&rec(399), 1).unwrap();
        assert_eq!(e.epochs.shape(), &[1, 1, 2, 200]);
        assert!(matches!(
            epoch(&rec(199), 1),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn epoch_is_an_exact_slice() {
        let r = rec(600);
        let e = epoch(&r, 1).unwrap();
        assert_eq!(e.epochs.shape()[0], 3);
        for k in 0..3 {
            for ch in 0..2 {
                for t in 0..200 {
                    assert_eq!(
                        e.epochs.get(&[k, 0, ch, t]),
                        r.samples.get(&[ch, k * 200 + t])
                    );
                }
            }
        }
    }

    #[test]
    fn epoch_perclos_uses_nearest_midpoint_sample() {
        // midpoints at 0.5 s (tie: earlier), 1.5 s (tie: earlier), 2.5 s
        let e = epoch(&rec(600), 1).unwrap();
        assert_eq!(e.perclos, vec![0.1, 0.9, 0.5]);
    }

    #[test]
    fn recording_validation() {
        let s = Tensor::zeros([2, 10]);
        assert!(RawRecording::new(200, vec!["a".into(), "a".into()], s.clone(), vec![]).is_err());
        assert!(RawRecording::new(0, vec!["a".into(), "b".into()], s.clone(), vec![]).is_err());
        assert!(RawRecording::new(200, vec!["a".into(), "b".into()], s, vec![(0.0, 2.0)]).is_err());
    }

    #[test]
    fn raw_import_is_channel_major() {
        let bytes: Vec<u8> = [1.0f32, 2.0, 3.0, 4.0, 5.0, 6.0]
            .iter()
            .flat_map(|v| v.to_le_bytes())
            .collect();
        let r =
            RawRecording::from_f32_le(100, vec!["a".into(), "b".into()], &bytes, vec![]).unwrap();
        assert_eq!(r.samples.get(&[1, 0]), 4.0);
        assert!(
            RawRecording::from_f32_le(100, vec!["a".into(), "b".into()], &bytes[..20], vec![])
                .is_err()
        );
    }
}
