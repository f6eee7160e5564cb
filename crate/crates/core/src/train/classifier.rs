use crate::error::{Error, Result};
use crate::model::{NlmdaNet, ParamVars};
use crate::tensor::{Mode, Tape, Tensor, Var};

/// A model trainable by [`fit`](super::fit).
///
/// `parameters` and `parameters_mut` list the same tensors in the same order;
/// `forward` receives one tape handle per parameter in that order.
pub trait Classifier {
    fn n_classes(&self) -> usize;
    fn parameters(&self) -> Vec<&Tensor>;
    fn parameters_mut(&mut self) -> Vec<&mut Tensor>;
    /// Records the forward pass for `x[B,1,C,T]` and returns logits `[B, classes]`.
    fn forward(&mut self, tape: &mut Tape, params: &[Var], x: Var, mode: Mode) -> Result<Var>;

    fn uses_batchnorm(&self) -> bool {
        false
    }
}

impl Classifier for NlmdaNet {
    fn n_classes(&self) -> usize {
        self.config.n_classes
    }

    fn parameters(&self) -> Vec<&Tensor> {
        self.params.named().into_iter().map(|(_, t)| t).collect()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        self.params.tensors_mut()
    }

    fn forward(&mut self, tape: &mut Tape, params: &[Var], x: Var, mode: Mode) -> Result<Var> {
        let vars = ParamVars::from_slice(params, self.config.use_batchnorm)?;
        NlmdaNet::forward(self, tape, &vars, x, mode)
    }

    fn uses_batchnorm(&self) -> bool {
        self.config.use_batchnorm
    }
}

/// Multinomial logistic regression on the flattened epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct LogisticModel {
    /// `[classes, C*T]`, zero-initialized.
    pub weight: Tensor,
    pub bias: Tensor,
}

impl LogisticModel {
    pub fn new(channels: usize, samples: usize, n_classes: usize) -> Result<Self> {
        if channels == 0 || samples == 0 || n_classes < 2 {
            return Err(Error::Config(format!(
                "logistic model needs C, T >= 1 and at least two classes, got {channels}, {samples}, {n_classes}"
            )));
        }
        Ok(LogisticModel {
            weight: Tensor::zeros([n_classes, channels * samples]),
            bias: Tensor::zeros([n_classes]),
        })
    }
}

impl Classifier for LogisticModel {
    fn n_classes(&self) -> usize {
        self.bias.numel()
    }

    fn parameters(&self) -> Vec<&Tensor> {
        vec![&self.weight, &self.bias]
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.weight, &mut self.bias]
    }

    fn forward(&mut self, tape: &mut Tape, params: &[Var], x: Var, _mode: Mode) -> Result<Var> {
        let &[w, b] = params else {
            return Err(Error::shape(format!(
                "logistic model takes 2 parameters, got {}",
                params.len()
            )));
        };
        let batch = tape.shape(x)[0];
        let flat_len = tape.value(x).numel() / batch;
        let flat = tape.reshape(x, &[batch, flat_len])?;
        tape.linear(flat, w, Some(b))
    }
}
