use super::{ModelConfig, NormStates, ParamVars};
use crate::error::{Error, Result};
use crate::tensor::{Mode, Padding, Tape, Var};

/// Output of an attention block together with its normalized weights.
#[derive(Clone, Copy, Debug)]
pub struct AttentionOutput {
    pub output: Var,
    pub weights: Var,
}

/// Intermediate nodes of the backbone, for inspection.
#[derive(Clone, Copy, Debug)]
pub struct BackboneTrace {
    pub temporal: Var,
    pub depth_attention: AttentionOutput,
    pub spatial: Var,
    pub pooled: Var,
    pub logits: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct ForwardTrace {
    pub expanded: Var,
    pub channel_attention: AttentionOutput,
    pub backbone: BackboneTrace,
    pub logits: Var,
}

/// Projects each electrode into `D` depth slices: `X'[b,h,c,t] = x[b,0,c,t] * c[h,0,c]`.
pub fn channel_attention_forward(
    tape: &mut Tape,
    config: &ModelConfig,
    x: Var,
    c: Var,
) -> Result<Var> {
    let s = tape.shape(x);
    if s.len() != 4 || s[1] != 1 || s[2] != config.channels || s[3] != config.samples {
        return Err(Error::shape(format!(
            "model input must be [B,1,{},{}], got {s:?}",
            config.channels, config.samples
        )));
    }
    tape.contract_expand(x, c)
}

/// Scores every `(b, d, c)` row with `W2 tanh(W1 x + b1)` over the time axis,
/// softmaxes the scores over channels and reweights the input.
pub fn nonlinear_attention_forward(
    tape: &mut Tape,
    x: Var,
    w1: Var,
    b1: Var,
    w2: Var,
) -> Result<AttentionOutput> {
    let s = tape.shape(x).to_vec();
    if s.len() != 4 {
        return Err(Error::shape(format!(
            "non-linear attention expects [B,D,C,T], got {s:?}"
        )));
    }
    let (b, d, c, t) = (s[0], s[1], s[2], s[3]);
    if tape.shape(w1)[1] != t {
        return Err(Error::shape(format!(
            "attention hidden weight expects {} time samples, input has {t}",
            tape.shape(w1)[1]
        )));
    }
    let hidden = tape.linear(x, w1, Some(b1))?;
    let hidden = tape.tanh(hidden)?;
    let scores = tape.linear(hidden, w2, None)?;
    if tape.shape(scores)[3] != 1 {
        return Err(Error::shape(
            "attention output weight must produce one score per row",
        ));
    }
    let scores = tape.reshape(scores, &[b, d, c])?;
    let alpha = tape.softmax(scores, 2)?;
    let alpha4 = tape.reshape(alpha, &[b, d, c, 1])?;
    let output = tape.hadamard(x, alpha4)?;
    Ok(AttentionOutput {
        output,
        weights: alpha,
    })
}

/// Semi-global pooling over channels, an edge-padded 1-D convolution across
/// depth (output length equals input length), softmax over depth scaled by the
/// depth extent, and a broadcast elementwise product with the input.
///
/// `weights` has shape `[B,D_o,1,T_o]` and equals `D_o * softmax(...)`, so a
/// uniform map leaves the features unchanged. Edge padding keeps the map
/// uniform whenever the pooled features are constant across depth.
pub fn depth_attention_forward(
    tape: &mut Tape,
    f: Var,
    w: Var,
    bias: Var,
) -> Result<AttentionOutput> {
    let s = tape.shape(f).to_vec();
    if s.len() != 4 {
        return Err(Error::shape(format!(
            "depth attention expects [B,D,C,T], got {s:?}"
        )));
    }
    let (b, d, c, t) = (s[0], s[1], s[2], s[3]);
    if d < 1 {
        return Err(Error::shape(
            "depth attention needs at least one depth slice",
        ));
    }
    let pooled = tape.avg_pool(f, (c, 1))?;
    // [B,D,1,T] and [B,1,D,T] share a memory layout; the second puts depth on the
    // convolution's spatial axis.
    let pooled = tape.reshape(pooled, &[b, 1, d, t])?;
    let mixed = tape.conv2d(pooled, w, Some(bias), Padding::Replicate)?;
    let soft = tape.softmax(mixed, 2)?;
    let scaled = tape.scale(soft, d as f64)?;
    let weights = tape.reshape(scaled, &[b, d, 1, t])?;
    let output = tape.hadamard(f, weights)?;
    Ok(AttentionOutput { output, weights })
}

fn maybe_norm(
    tape: &mut Tape,
    x: Var,
    affine: Option<(Var, Var)>,
    state: Option<&mut crate::tensor::BatchNormState>,
    mode: Mode,
) -> Result<Var> {
    match (affine, state) {
        (Some((g, b)), Some(st)) => tape.batch_norm(x, g, b, st, mode),
        (None, _) => Ok(x),
        (Some(_), None) => Err(Error::shape(
            "batch-norm parameters present without running statistics",
        )),
    }
}

/// Temporal conv, [BN], GELU, depth attention, spatial conv, [BN], GELU,
/// average pooling, flatten, linear.
pub fn benchmark_forward(
    tape: &mut Tape,
    config: &ModelConfig,
    p: &ParamVars,
    mut norms: Option<&mut NormStates>,
    x: Var,
    mode: Mode,
) -> Result<BackboneTrace> {
    let s = tape.shape(x);
    if s.len() != 4 || s[1] != config.depth || s[2] != config.channels || s[3] != config.samples {
        return Err(Error::shape(format!(
            "backbone input must be [B,{},{},{}], got {s:?}",
            config.depth, config.channels, config.samples
        )));
    }
    if config.use_batchnorm != p.temporal_bn.is_some() {
        return Err(Error::shape(
            "batch-norm setting does not match the parameter set",
        ));
    }
    let batch = s[0];
    let h = tape.conv2d(x, p.temporal_w, Some(p.temporal_b), Padding::Valid)?;
    let h = maybe_norm(
        tape,
        h,
        p.temporal_bn,
        norms.as_deref_mut().map(|n| &mut n.temporal),
        mode,
    )?;
    let temporal = tape.gelu(h)?;
    let depth_attention = depth_attention_forward(tape, temporal, p.depth_w, p.depth_b)?;
    let h = tape.conv2d(
        depth_attention.output,
        p.spatial_w,
        Some(p.spatial_b),
        Padding::Valid,
    )?;
    let h = maybe_norm(tape, h, p.spatial_bn, norms.map(|n| &mut n.spatial), mode)?;
    let spatial = tape.gelu(h)?;
    let pooled = tape.avg_pool(spatial, (1, config.k_pooling()?))?;
    let flat_len = tape.value(pooled).numel() / batch;
    let flat = tape.reshape(pooled, &[batch, flat_len])?;
    let logits = tape.linear(flat, p.fc_w, Some(p.fc_b))?;
    Ok(BackboneTrace {
        temporal,
        depth_attention,
        spatial,
        pooled,
        logits,
    })
}

/// Channel attention, non-linear attention, then the backbone.
pub fn model_forward(
    tape: &mut Tape,
    config: &ModelConfig,
    p: &ParamVars,
    norms: Option<&mut NormStates>,
    x: Var,
    mode: Mode,
) -> Result<ForwardTrace> {
    let expanded = channel_attention_forward(tape, config, x, p.channel_attn)?;
    let channel_attention =
        nonlinear_attention_forward(tape, expanded, p.attn_w1, p.attn_b1, p.attn_w2)?;
    let backbone = benchmark_forward(tape, config, p, norms, channel_attention.output, mode)?;
    Ok(ForwardTrace {
        expanded,
        channel_attention,
        backbone,
        logits: backbone.logits,
    })
}
