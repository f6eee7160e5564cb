//! NLMDA-Net: channel attention, non-linear attention and depth attention around
//! a temporal/spatial convolutional backbone.
//!
//! Data flow for an input `x[B,1,C,T]`:
//!
//! ```text
//! channel attention      x -> X'[B,D,C,T]            (depth expansion, D*C weights)
//! non-linear attention   X' -> alpha . X'            (tanh MLP over time, softmax over channels)
//! temporal conv          -> [B,12,C,T-8]   [BN] GELU
//! depth attention        -> A . F                    (semi-global pool, 1-D conv over depth, softmax * D_o)
//! spatial conv           -> [B,7,1,T-8]    [BN] GELU
//! avg pool (1,k)         -> flatten -> linear -> logits[B,n_classes]
//! ```

mod checkpoint;
mod layers;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{gradcheck_at, BatchNormState, Mode, Tape, Tensor, Var};

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use layers::{
    benchmark_forward, channel_attention_forward, depth_attention_forward, model_forward,
    nonlinear_attention_forward, AttentionOutput, BackboneTrace, ForwardTrace,
};

/// Pooling width tied to the sampling rate and the number of training samples:
/// `max(1, floor(f / 10 / max(1, floor(n_train / 200))))`.
pub fn compute_k_pooling(fs_hz: usize, n_train: usize) -> Result<usize> {
    if fs_hz == 0 || n_train == 0 {
        return Err(Error::invalid(format!(
            "k_pooling needs positive inputs, got f={fs_hz}, N_t={n_train}"
        )));
    }
    let n = (n_train / 200).max(1);
    Ok((fs_hz / 10 / n).max(1))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub channels: usize,
    pub samples: usize,
    /// Depth of the channel-attention expansion.
    pub depth: usize,
    pub temporal_kernels: usize,
    pub temporal_len: usize,
    pub spatial_kernels: usize,
    pub depth_attn_kernel: usize,
    pub attn_hidden: usize,
    pub n_classes: usize,
    pub fs_hz: usize,
    /// Training-set size; only used to derive the pooling width.
    pub n_train: usize,
    pub use_batchnorm: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    /// The SEED-VIG geometry: 17 channels, 1 s at 200 Hz, 28497 training epochs.
    fn default() -> Self {
        ModelConfig {
            channels: 17,
            samples: 200,
            depth: 9,
            temporal_kernels: 12,
            temporal_len: 9,
            spatial_kernels: 7,
            depth_attn_kernel: 7,
            attn_hidden: 16,
            n_classes: 2,
            fs_hz: 200,
            n_train: 28497,
            use_batchnorm: true,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Small geometry used for end-to-end gradient checks.
    pub fn tiny() -> Self {
        ModelConfig {
            channels: 3,
            samples: 20,
            depth: 2,
            temporal_kernels: 4,
            spatial_kernels: 3,
            attn_hidden: 4,
            use_batchnorm: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let extents = [
            ("channels", self.channels),
            ("samples", self.samples),
            ("depth", self.depth),
            ("temporal_kernels", self.temporal_kernels),
            ("temporal_len", self.temporal_len),
            ("spatial_kernels", self.spatial_kernels),
            ("depth_attn_kernel", self.depth_attn_kernel),
            ("attn_hidden", self.attn_hidden),
            ("fs_hz", self.fs_hz),
            ("n_train", self.n_train),
        ];
        if let Some((name, _)) = extents.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.n_classes < 2 {
            return Err(Error::Config("n_classes must be at least 2".into()));
        }
        if self.temporal_len > self.samples {
            return Err(Error::Config(format!(
                "temporal_len {} exceeds samples {}",
                self.temporal_len, self.samples
            )));
        }
        let k = self.k_pooling()?;
        if k > self.conv_len() {
            return Err(Error::Config(format!(
                "pooling width {k} exceeds the {} samples left after temporal convolution",
                self.conv_len()
            )));
        }
        Ok(())
    }

    pub fn k_pooling(&self) -> Result<usize> {
        compute_k_pooling(self.fs_hz, self.n_train)
    }

    /// Time extent after the valid temporal convolution.
    pub fn conv_len(&self) -> usize {
        self.samples + 1 - self.temporal_len
    }

    /// Input width of the classifier layer.
    pub fn fc_inputs(&self) -> Result<usize> {
        Ok(self.spatial_kernels * (self.conv_len() / self.k_pooling()?))
    }

    /// Element counts per layer, in checkpoint order.
    pub fn param_table(&self) -> Result<Vec<(&'static str, usize)>> {
        self.validate()?;
        let (d, c, t, h) = (self.depth, self.channels, self.samples, self.attn_hidden);
        let (kt, ks) = (self.temporal_kernels, self.spatial_kernels);
        let mut table = vec![
            ("channel_attention", d * c),
            ("nonlinear_attention", h * t + h + h),
            ("temporal_conv", kt * d * self.temporal_len + kt),
        ];
        if self.use_batchnorm {
            table.push(("temporal_bn", 2 * kt));
        }
        table.push(("depth_attention", self.depth_attn_kernel + 1));
        table.push(("spatial_conv", ks * kt * c + ks));
        if self.use_batchnorm {
            table.push(("spatial_bn", 2 * ks));
        }
        table.push((
            "classifier",
            self.n_classes * self.fc_inputs()? + self.n_classes,
        ));
        Ok(table)
    }
}

/// Total number of trainable scalars.
pub fn param_count(config: &ModelConfig) -> Result<usize> {
    Ok(config.param_table()?.iter().map(|(_, n)| n).sum())
}

/// Scale and shift of one batch-normalization layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Affine {
    pub gamma: Tensor,
    pub beta: Tensor,
}

impl Affine {
    fn identity(depth: usize) -> Self {
        Affine {
            gamma: Tensor::ones([depth]),
            beta: Tensor::zeros([depth]),
        }
    }
}

/// Every trainable array of the network.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    /// `c[D,1,C]`
    pub channel_attn: Tensor,
    /// `W1[H,T]`
    pub attn_w1: Tensor,
    pub attn_b1: Tensor,
    /// `W2[1,H]`
    pub attn_w2: Tensor,
    /// `[temporal_kernels, D, 1, temporal_len]`
    pub temporal_w: Tensor,
    pub temporal_b: Tensor,
    pub temporal_bn: Option<Affine>,
    /// `[1, 1, depth_attn_kernel, 1]`, a 1-D kernel over the depth axis
    pub depth_w: Tensor,
    pub depth_b: Tensor,
    /// `[spatial_kernels, temporal_kernels, C, 1]`
    pub spatial_w: Tensor,
    pub spatial_b: Tensor,
    pub spatial_bn: Option<Affine>,
    pub fc_w: Tensor,
    pub fc_b: Tensor,
}

impl ModelParams {
    /// Arrays in their fixed serialization order.
    pub fn named(&self) -> Vec<(&'static str, &Tensor)> {
        let mut v = vec![
            ("channel_attn", &self.channel_attn),
            ("attn_w1", &self.attn_w1),
            ("attn_b1", &self.attn_b1),
            ("attn_w2", &self.attn_w2),
            ("temporal_w", &self.temporal_w),
            ("temporal_b", &self.temporal_b),
        ];
        if let Some(bn) = &self.temporal_bn {
            v.push(("temporal_bn_gamma", &bn.gamma));
            v.push(("temporal_bn_beta", &bn.beta));
        }
        v.push(("depth_w", &self.depth_w));
        v.push(("depth_b", &self.depth_b));
        v.push(("spatial_w", &self.spatial_w));
        v.push(("spatial_b", &self.spatial_b));
        if let Some(bn) = &self.spatial_bn {
            v.push(("spatial_bn_gamma", &bn.gamma));
            v.push(("spatial_bn_beta", &bn.beta));
        }
        v.push(("fc_w", &self.fc_w));
        v.push(("fc_b", &self.fc_b));
        v
    }

    /// Same order as [`ModelParams::named`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = vec![
            &mut self.channel_attn,
            &mut self.attn_w1,
            &mut self.attn_b1,
            &mut self.attn_w2,
            &mut self.temporal_w,
            &mut self.temporal_b,
        ];
        if let Some(bn) = &mut self.temporal_bn {
            v.push(&mut bn.gamma);
            v.push(&mut bn.beta);
        }
        v.push(&mut self.depth_w);
        v.push(&mut self.depth_b);
        v.push(&mut self.spatial_w);
        v.push(&mut self.spatial_b);
        if let Some(bn) = &mut self.spatial_bn {
            v.push(&mut bn.gamma);
            v.push(&mut bn.beta);
        }
        v.push(&mut self.fc_w);
        v.push(&mut self.fc_b);
        v
    }

    pub fn expected_shapes(config: &ModelConfig) -> Result<Vec<Vec<usize>>> {
        let c = config;
        let mut v = vec![
            vec![c.depth, 1, c.channels],
            vec![c.attn_hidden, c.samples],
            vec![c.attn_hidden],
            vec![1, c.attn_hidden],
            vec![c.temporal_kernels, c.depth, 1, c.temporal_len],
            vec![c.temporal_kernels],
        ];
        if c.use_batchnorm {
            v.push(vec![c.temporal_kernels]);
            v.push(vec![c.temporal_kernels]);
        }
        v.push(vec![1, 1, c.depth_attn_kernel, 1]);
        v.push(vec![1]);
        v.push(vec![c.spatial_kernels, c.temporal_kernels, c.channels, 1]);
        v.push(vec![c.spatial_kernels]);
        if c.use_batchnorm {
            v.push(vec![c.spatial_kernels]);
            v.push(vec![c.spatial_kernels]);
        }
        v.push(vec![c.n_classes, c.fc_inputs()?]);
        v.push(vec![c.n_classes]);
        Ok(v)
    }

    /// Rebuilds parameters from arrays in serialization order.
    pub fn from_tensors(config: &ModelConfig, tensors: Vec<Tensor>) -> Result<Self> {
        let shapes = Self::expected_shapes(config)?;
        if tensors.len() != shapes.len() {
            return Err(Error::shape(format!(
                "expected {} parameter arrays, got {}",
                shapes.len(),
                tensors.len()
            )));
        }
        for (k, (t, s)) in tensors.iter().zip(&shapes).enumerate() {
            if t.shape() != s.as_slice() {
                return Err(Error::shape(format!(
                    "parameter array {k} has shape {:?}, expected {s:?}",
                    t.shape()
                )));
            }
        }
        let mut it = tensors.into_iter();
        let mut next = || it.next().expect("length checked");
        let channel_attn = next();
        let attn_w1 = next();
        let attn_b1 = next();
        let attn_w2 = next();
        let temporal_w = next();
        let temporal_b = next();
        let temporal_bn = config.use_batchnorm.then(|| Affine {
            gamma: next(),
            beta: next(),
        });
        let depth_w = next();
        let depth_b = next();
        let spatial_w = next();
        let spatial_b = next();
        let spatial_bn = config.use_batchnorm.then(|| Affine {
            gamma: next(),
            beta: next(),
        });
        let fc_w = next();
        let fc_b = next();
        Ok(ModelParams {
            channel_attn,
            attn_w1,
            attn_b1,
            attn_w2,
            temporal_w,
            temporal_b,
            temporal_bn,
            depth_w,
            depth_b,
            spatial_w,
            spatial_b,
            spatial_bn,
            fc_w,
            fc_b,
        })
    }

    pub fn count(&self) -> usize {
        self.named().iter().map(|(_, t)| t.numel()).sum()
    }
}

/// Draws a fresh parameter set: `c ~ N(0,1)`, weights `~ N(0, 1/fan_in)`,
/// biases zero, batch-norm scale one and shift zero.
pub fn init_params(config: &ModelConfig, seed: u64) -> Result<ModelParams> {
    config.validate()?;
    let c = config;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fan_in =
        |shape: Vec<usize>, fan: usize| Tensor::randn(shape, 1.0 / (fan as f64).sqrt(), &mut rng);
    let channel_attn = fan_in(vec![c.depth, 1, c.channels], 1);
    let attn_w1 = fan_in(vec![c.attn_hidden, c.samples], c.samples);
    let attn_w2 = fan_in(vec![1, c.attn_hidden], c.attn_hidden);
    let temporal_w = fan_in(
        vec![c.temporal_kernels, c.depth, 1, c.temporal_len],
        c.depth * c.temporal_len,
    );
    let depth_w = fan_in(vec![1, 1, c.depth_attn_kernel, 1], c.depth_attn_kernel);
    let spatial_w = fan_in(
        vec![c.spatial_kernels, c.temporal_kernels, c.channels, 1],
        c.temporal_kernels * c.channels,
    );
    let fc_in = c.fc_inputs()?;
    let fc_w = fan_in(vec![c.n_classes, fc_in], fc_in);
    Ok(ModelParams {
        channel_attn,
        attn_w1,
        attn_b1: Tensor::zeros([c.attn_hidden]),
        attn_w2,
        temporal_w,
        temporal_b: Tensor::zeros([c.temporal_kernels]),
        temporal_bn: c
            .use_batchnorm
            .then(|| Affine::identity(c.temporal_kernels)),
        depth_w,
        depth_b: Tensor::zeros([1]),
        spatial_w,
        spatial_b: Tensor::zeros([c.spatial_kernels]),
        spatial_bn: c.use_batchnorm.then(|| Affine::identity(c.spatial_kernels)),
        fc_w,
        fc_b: Tensor::zeros([c.n_classes]),
    })
}

/// Running statistics of both batch-norm stages.
#[derive(Clone, Debug, PartialEq)]
pub struct NormStates {
    pub temporal: BatchNormState,
    pub spatial: BatchNormState,
}

/// Tape handles for every parameter, registered in serialization order.
#[derive(Clone, Copy, Debug)]
pub struct ParamVars {
    pub channel_attn: Var,
    pub attn_w1: Var,
    pub attn_b1: Var,
    pub attn_w2: Var,
    pub temporal_w: Var,
    pub temporal_b: Var,
    pub temporal_bn: Option<(Var, Var)>,
    pub depth_w: Var,
    pub depth_b: Var,
    pub spatial_w: Var,
    pub spatial_b: Var,
    pub spatial_bn: Option<(Var, Var)>,
    pub fc_w: Var,
    pub fc_b: Var,
}

impl ParamVars {
    pub fn register(tape: &mut Tape, params: &ModelParams) -> Self {
        let vars: Vec<Var> = params
            .named()
            .into_iter()
            .map(|(_, t)| tape.param(t.clone()))
            .collect();
        Self::from_slice(&vars, params.temporal_bn.is_some()).expect("registered in order")
    }

    pub fn from_slice(vars: &[Var], with_bn: bool) -> Result<Self> {
        let expected = if with_bn { 16 } else { 12 };
        if vars.len() != expected {
            return Err(Error::shape(format!(
                "expected {expected} parameter handles, got {}",
                vars.len()
            )));
        }
        let mut it = vars.iter().copied();
        let mut next = || it.next().expect("length checked");
        Ok(ParamVars {
            channel_attn: next(),
            attn_w1: next(),
            attn_b1: next(),
            attn_w2: next(),
            temporal_w: next(),
            temporal_b: next(),
            temporal_bn: with_bn.then(|| (next(), next())),
            depth_w: next(),
            depth_b: next(),
            spatial_w: next(),
            spatial_b: next(),
            spatial_bn: with_bn.then(|| (next(), next())),
            fc_w: next(),
            fc_b: next(),
        })
    }
}

/// A configured network with its parameters and batch-norm statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct NlmdaNet {
    pub config: ModelConfig,
    pub params: ModelParams,
    pub norms: Option<NormStates>,
}

impl NlmdaNet {
    /// Initializes from `config.seed`.
    pub fn new(config: ModelConfig) -> Result<Self> {
        let params = init_params(&config, config.seed)?;
        let norms = config.use_batchnorm.then(|| NormStates {
            temporal: BatchNormState::new(config.temporal_kernels),
            spatial: BatchNormState::new(config.spatial_kernels),
        });
        Ok(NlmdaNet {
            config,
            params,
            norms,
        })
    }

    /// Records a full forward pass and returns the logits.
    pub fn forward(
        &mut self,
        tape: &mut Tape,
        vars: &ParamVars,
        x: Var,
        mode: Mode,
    ) -> Result<Var> {
        Ok(model_forward(tape, &self.config, vars, self.norms.as_mut(), x, mode)?.logits)
    }

    /// Logits for a batch, evaluated without recording gradients.
    pub fn predict(&mut self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = self
            .params
            .named()
            .into_iter()
            .map(|(_, t)| tape.constant(t.clone()))
            .collect();
        let vars = ParamVars::from_slice(&vars, self.config.use_batchnorm)?;
        let xv = tape.constant(x.clone());
        let logits = self.forward(&mut tape, &vars, xv, Mode::Eval)?;
        Ok(tape.value(logits).clone())
    }
}

/// Parameters whose loss gradient is zero by construction: the depth-attention
/// bias shifts every score of one softmax equally, and batch normalization
/// cancels the bias of the convolution before it.
pub fn structurally_inert(config: &ModelConfig) -> Vec<&'static str> {
    let mut names = vec!["depth_b"];
    if config.use_batchnorm {
        names.extend(["temporal_b", "spatial_b"]);
    }
    names
}

/// Finite-difference check of the whole network: cross-entropy of a random
/// batch against every parameter, or against `max_coords` randomly chosen
/// parameter coordinates. Returns the largest relative error.
///
/// Parameters listed by [`structurally_inert`] are excluded from the
/// comparison, where only rounding noise would be measured; their analytic
/// gradients must instead vanish.
pub fn gradcheck_model(
    config: &ModelConfig,
    batch: usize,
    seed: u64,
    max_coords: Option<usize>,
) -> Result<f64> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = init_params(config, seed)?;
    let named = params.named();
    let inputs: Vec<Tensor> = named.iter().map(|(_, t)| (*t).clone()).collect();
    let x = Tensor::randn([batch, 1, config.channels, config.samples], 1.0, &mut rng);
    let labels: Vec<usize> = (0..batch).map(|i| i % config.n_classes).collect();
    let loss = |tape: &mut Tape, vars: &[Var]| {
        let pv = ParamVars::from_slice(vars, config.use_batchnorm)?;
        let mut norms = config.use_batchnorm.then(|| NormStates {
            temporal: BatchNormState::new(config.temporal_kernels),
            spatial: BatchNormState::new(config.spatial_kernels),
        });
        let xv = tape.constant(x.clone());
        let logits = model_forward(tape, config, &pv, norms.as_mut(), xv, Mode::Train)?.logits;
        tape.cross_entropy(logits, &labels)
    };

    let inert = structurally_inert(config);
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = loss(&mut tape, &vars)?;
    tape.backward(out)?;
    for (k, (name, _)) in named
        .iter()
        .enumerate()
        .filter(|(_, (n, _))| inert.contains(n))
    {
        let worst = tape.grad(vars[k]).map_or(0.0, |g| {
            g.data().iter().fold(0.0, |m: f64, v| m.max(v.abs()))
        });
        if worst > 1e-12 {
            return Err(Error::Numerical(format!(
                "{name} should have a zero gradient, found {worst:e}"
            )));
        }
    }

    let mut coords: Vec<(usize, usize)> = inputs
        .iter()
        .enumerate()
        .filter(|(k, _)| !inert.contains(&named[*k].0))
        .flat_map(|(k, t)| (0..t.numel()).map(move |i| (k, i)))
        .collect();
    if let Some(n) = max_coords {
        coords.shuffle(&mut rng);
        coords.truncate(n);
    }
    gradcheck_at(loss, &inputs, &coords)
}
