//! Parameter checkpoint file.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "NLMD"                magic
//! u16                   format version (1)
//! u32 x 10              channels, samples, depth, temporal_kernels, temporal_len,
//!                       spatial_kernels, depth_attn_kernel, attn_hidden, n_classes, fs_hz
//! u64                   n_train
//! u8                    use_batchnorm (0 or 1)
//! u64                   seed
//! arrays                parameters in `ModelParams::named` order, then, when batch
//!                       norm is on, running mean and variance of the temporal stage
//!                       followed by those of the spatial stage
//! ```
//!
//! Each array is `rank: u8`, `extents: u32 x rank`, then the raw `f64` values.

use std::path::Path;

use super::{ModelConfig, ModelParams, NlmdaNet, NormStates};
use crate::codec::Reader;
use crate::error::{Error, FormatError, Result};
use crate::tensor::{BatchNormState, Tensor};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"NLMD";
pub const CHECKPOINT_VERSION: u16 = 1;

fn put_array(out: &mut Vec<u8>, t: &Tensor) {
    out.push(t.rank() as u8);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn get_array(r: &mut Reader<'_>) -> Result<Tensor, FormatError> {
    let rank = r.u8()? as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(r.u32()? as usize);
    }
    let numel: usize = shape.iter().product();
    let raw = r.take(
        numel
            .checked_mul(8)
            .ok_or_else(|| FormatError::InvalidField("array too large".into()))?,
    )?;
    let data = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Tensor::new(shape, data).map_err(|e| FormatError::InvalidField(e.to_string()))
}

pub fn encode_checkpoint(net: &NlmdaNet) -> Vec<u8> {
    let c = &net.config;
    let mut out = Vec::new();
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for v in [
        c.channels,
        c.samples,
        c.depth,
        c.temporal_kernels,
        c.temporal_len,
        c.spatial_kernels,
        c.depth_attn_kernel,
        c.attn_hidden,
        c.n_classes,
        c.fs_hz,
    ] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&(c.n_train as u64).to_le_bytes());
    out.push(c.use_batchnorm as u8);
    out.extend_from_slice(&c.seed.to_le_bytes());
    for (_, t) in net.params.named() {
        put_array(&mut out, t);
    }
    if let Some(n) = &net.norms {
        for stats in [&n.temporal, &n.spatial] {
            put_array(
                &mut out,
                &Tensor::new([stats.running_mean.len()], stats.running_mean.clone())
                    .expect("non-empty"),
            );
            put_array(
                &mut out,
                &Tensor::new([stats.running_var.len()], stats.running_var.clone())
                    .expect("non-empty"),
            );
        }
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<NlmdaNet> {
    let mut r = Reader::new(bytes);
    r.magic(CHECKPOINT_MAGIC)?;
    let version = r.u16()?;
    if version != CHECKPOINT_VERSION {
        return Err(FormatError::VersionMismatch {
            expected: CHECKPOINT_VERSION,
            found: version,
        }
        .into());
    }
    let mut dims = [0usize; 10];
    for d in &mut dims {
        *d = r.u32()? as usize;
    }
    let n_train = r.u64()? as usize;
    let use_batchnorm = match r.u8()? {
        0 => false,
        1 => true,
        other => {
            return Err(FormatError::InvalidField(format!("use_batchnorm flag {other}")).into())
        }
    };
    let seed = r.u64()?;
    let config = ModelConfig {
        channels: dims[0],
        samples: dims[1],
        depth: dims[2],
        temporal_kernels: dims[3],
        temporal_len: dims[4],
        spatial_kernels: dims[5],
        depth_attn_kernel: dims[6],
        attn_hidden: dims[7],
        n_classes: dims[8],
        fs_hz: dims[9],
        n_train,
        use_batchnorm,
        seed,
    };
    config
        .validate()
        .map_err(|e| FormatError::InvalidField(format!("stored config: {e}")))?;
    let n_arrays = ModelParams::expected_shapes(&config)?.len();
    let mut arrays = Vec::with_capacity(n_arrays);
    for _ in 0..n_arrays {
        arrays.push(get_array(&mut r)?);
    }
    let params = ModelParams::from_tensors(&config, arrays)
        .map_err(|e| FormatError::InvalidField(e.to_string()))?;
    let norms = if use_batchnorm {
        let mut stage = |depth: usize| -> Result<BatchNormState> {
            let mut st = BatchNormState::new(depth);
            let mean = get_array(&mut r)?;
            let var = get_array(&mut r)?;
            if mean.shape() != [depth] || var.shape() != [depth] {
                return Err(FormatError::InvalidField(format!(
                    "running statistics must have shape [{depth}]"
                ))
                .into());
            }
            st.running_mean = mean.into_data();
            st.running_var = var.into_data();
            Ok(st)
        };
        let temporal = stage(config.temporal_kernels)?;
        let spatial = stage(config.spatial_kernels)?;
        Some(NormStates { temporal, spatial })
    } else {
        None
    };
    if r.remaining() != 0 {
        return Err(FormatError::CountMismatch(format!(
            "{} trailing bytes after the last array",
            r.remaining()
        ))
        .into());
    }
    Ok(NlmdaNet {
        config,
        params,
        norms,
    })
}

pub fn write_checkpoint(net: &NlmdaNet, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_checkpoint(net))?;
    Ok(())
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<NlmdaNet> {
    let path = path.as_ref();
    let bytes = std::fs::read(path)?;
    decode_checkpoint(&bytes).map_err(|e| match e {
        Error::Format(source) => Error::File {
            path: path.to_path_buf(),
            source,
        },
        other => other,
    })
}
