//! Epoch file.
//!
//! ```text
//! "NEEG"        magic
//! u16           format version (1)
//! u64           n_epochs
//! u16           channels
//! u16           samples per epoch
//! u16           sampling rate in Hz
//! u8            label dtype (1 = u8)
//! u8 x n        labels
//! f32 x n*C*T   epochs in (epoch, channel, time) order
//! ```
//!
//! All integers and floats are little-endian. A sibling `<file>.manifest` holds
//! `key=value` provenance lines.

use std::fs;
use std::path::{Path, PathBuf};

use super::{class_counts, EpochSet};
use crate::codec::Reader;
use crate::error::{Error, FormatError, Result};
use crate::tensor::Tensor;

pub const EPOCH_MAGIC: [u8; 4] = *b"NEEG";
pub const EPOCH_VERSION: u16 = 1;
const LABEL_U8: u8 = 1;

pub fn encode_epochs(set: &EpochSet) -> Result<Vec<u8>> {
    let (c, t) = (set.channels(), set.samples());
    let narrow = |v: usize, what: &str| {
        u16::try_from(v)
            .map_err(|_| Error::invalid(format!("{what} {v} does not fit the epoch file")))
    };
    let (c16, t16) = (narrow(c, "channel count")?, narrow(t, "epoch length")?);
    let fs16 = narrow(set.fs_hz as usize, "sampling rate")?;
    let mut out = Vec::with_capacity(21 + set.len() * (1 + 4 * c * t));
    out.extend_from_slice(&EPOCH_MAGIC);
    out.extend_from_slice(&EPOCH_VERSION.to_le_bytes());
    out.extend_from_slice(&(set.len() as u64).to_le_bytes());
    out.extend_from_slice(&c16.to_le_bytes());
    out.extend_from_slice(&t16.to_le_bytes());
    out.extend_from_slice(&fs16.to_le_bytes());
    out.push(LABEL_U8);
    for &l in &set.labels {
        out.push(
            u8::try_from(l).map_err(|_| Error::invalid(format!("label {l} does not fit in u8")))?,
        );
    }
    for &v in set.epochs.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

/// Decodes an epoch file. Provenance is left empty.
pub fn decode_epochs(bytes: &[u8]) -> Result<EpochSet, FormatError> {
    let mut r = Reader::new(bytes);
    r.magic(EPOCH_MAGIC)?;
    let version = r.u16()?;
    if version != EPOCH_VERSION {
        return Err(FormatError::VersionMismatch {
            expected: EPOCH_VERSION,
            found: version,
        });
    }
    let n = r.u64()? as usize;
    let (c, t, fs) = (r.u16()? as usize, r.u16()? as usize, r.u16()?);
    let dtype = r.u8()?;
    if dtype != LABEL_U8 {
        return Err(FormatError::InvalidField(format!("label dtype {dtype}")));
    }
    if n == 0 || c == 0 || t == 0 || fs == 0 {
        return Err(FormatError::InvalidField(format!(
            "empty geometry n={n} C={c} T={t} fs={fs}"
        )));
    }
    let labels: Vec<usize> = r.take(n)?.iter().map(|&l| l as usize).collect();
    let payload = n
        .checked_mul(c * t * 4)
        .ok_or_else(|| FormatError::InvalidField("epoch count overflows".into()))?;
    let raw = r.take(payload)?;
    if r.remaining() != 0 {
        return Err(FormatError::CountMismatch(format!(
            "{} bytes after {n} epochs",
            r.remaining()
        )));
    }
    let data = raw
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
        .collect();
    let epochs =
        Tensor::new([n, 1, c, t], data).map_err(|e| FormatError::InvalidField(e.to_string()))?;
    EpochSet::new(epochs, labels, fs as u32, "")
        .map_err(|e| FormatError::InvalidField(e.to_string()))
}

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest");
    PathBuf::from(s)
}

fn manifest(set: &EpochSet) -> String {
    let counts = class_counts(&set.labels);
    let mut m = format!(
        "format=NEEG\nversion={EPOCH_VERSION}\nn_epochs={}\nchannels={}\nsamples={}\nfs_hz={}\n",
        set.len(),
        set.channels(),
        set.samples(),
        set.fs_hz
    );
    for (class, n) in counts.iter().enumerate() {
        m.push_str(&format!("class_{class}={n}\n"));
    }
    m.push_str(&format!(
        "provenance={}\n",
        set.provenance.replace('\n', " ")
    ));
    m
}

/// Writes the epoch file and its manifest.
pub fn write_epochs(set: &EpochSet, path: &Path) -> Result<()> {
    fs::write(path, encode_epochs(set)?)?;
    fs::write(manifest_path(path), manifest(set))?;
    Ok(())
}

/// Reads an epoch file; provenance comes from the manifest when one exists.
pub fn read_epochs(path: &Path) -> Result<EpochSet> {
    let bytes = fs::read(path)?;
    let mut set = decode_epochs(&bytes).map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })?;
    set.provenance = match fs::read_to_string(manifest_path(path)) {
        Ok(text) => text
            .lines()
            .find_map(|l| l.strip_prefix("provenance="))
            .unwrap_or_default()
            .to_string(),
        Err(_) => format!("file {}", path.display()),
    };
    Ok(set)
}
