//! Fully convolutional encoder, MLP projector and their optimizers.

mod layers;
mod optim;

pub use layers::{global_avg_pool, global_avg_pool_backward, BatchNorm1d, Conv1d, Linear, Relu};
pub use optim::{Adam, AdamState, Optimizer, Sgd};

use ndarray::{Array2, Array3, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A trainable tensor stored flat in row-major order, with its gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
}

impl Param {
    pub fn zeros(name: String, shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            name,
            shape,
            value: vec![0.0; n],
            grad: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub(crate) fn matrix(&self, rows: usize, cols: usize) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((rows, cols), &self.value).expect("parameter matrix shape")
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

/// Encoder width preset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// 128/256/128 filters.
    #[default]
    Full,
    /// 32/64/32 filters for desk-scale runs.
    Small,
}

impl std::str::FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Profile::Full),
            "small" => Ok(Profile::Small),
            other => Err(Error::InvalidArgument(format!(
                "unknown profile '{other}' (expected small or full)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_channels: usize,
    pub filters: [usize; 3],
    pub kernels: [usize; 3],
    pub projector_hidden: usize,
    pub projector_out: usize,
}

impl ModelConfig {
    pub fn for_profile(profile: Profile, input_channels: usize) -> Self {
        let filters = match profile {
            Profile::Full => [128, 256, 128],
            Profile::Small => [32, 64, 32],
        };
        Self {
            input_channels,
            filters,
            kernels: [8, 5, 3],
            projector_hidden: 128,
            projector_out: 128,
        }
    }

    pub fn representation_dim(&self) -> usize {
        self.filters[2]
    }
}

#[derive(Debug, Clone)]
struct ConvBlock {
    conv: Conv1d,
    bn: BatchNorm1d,
    relu: Relu,
}

/// Three conv/batch-norm/ReLU blocks followed by global average pooling.
#[derive(Debug, Clone)]
pub struct Encoder {
    blocks: Vec<ConvBlock>,
    input_channels: usize,
    batch: usize,
    len: usize,
}

impl Encoder {
    pub fn new<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Self {
        let mut in_ch = config.input_channels;
        let blocks = (0..3)
            .map(|i| {
                let prefix = format!("encoder.block{i}");
                let conv = Conv1d::new(
                    &format!("{prefix}.conv"),
                    in_ch,
                    config.filters[i],
                    config.kernels[i],
                    rng,
                );
                in_ch = config.filters[i];
                ConvBlock {
                    conv,
                    bn: BatchNorm1d::new(&format!("{prefix}.bn"), config.filters[i]),
                    relu: Relu::default(),
                }
            })
            .collect();
        Self {
            blocks,
            input_channels: config.input_channels,
            batch: 0,
            len: 0,
        }
    }

    /// Maps a `B x L x D` batch to `B x C` representations. `train` selects
    /// batch statistics (and updates running averages) in normalization.
    pub fn forward(&mut self, x: &Array3<f64>, train: bool) -> Result<Array2<f64>> {
        let (batch, len, channels) = x.dim();
        if channels != self.input_channels {
            return Err(Error::shape("encoder input channels", self.input_channels, channels));
        }
        if batch == 0 || len == 0 {
            return Err(Error::shape("encoder input", "non-empty batch", format!("{batch}x{len}")));
        }
        let mut h = Array2::<f64>::zeros((channels, batch * len));
        for b in 0..batch {
            for t in 0..len {
                for d in 0..channels {
                    h[[d, b * len + t]] = x[[b, t, d]];
                }
            }
        }
        for block in &mut self.blocks {
            let z = block.conv.forward(h.view(), batch, len);
            let z = block.bn.forward(&z, train);
            h = block.relu.forward(z);
        }
        self.batch = batch;
        self.len = len;
        Ok(global_avg_pool(&h, batch, len))
    }

    /// Accumulates parameter gradients and returns `dL/dx` as `B x L x D`.
    pub fn backward(&mut self, d_rep: &Array2<f64>) -> Array3<f64> {
        let (batch, len) = (self.batch, self.len);
        let mut g = global_avg_pool_backward(d_rep, len);
        for block in self.blocks.iter_mut().rev() {
            let dz = block.relu.backward(g);
            let dz = block.bn.backward(&dz);
            g = block.conv.backward(&dz);
        }
        let channels = self.input_channels;
        let mut dx = Array3::<f64>::zeros((batch, len, channels));
        for b in 0..batch {
            for t in 0..len {
                for d in 0..channels {
                    dx[[b, t, d]] = g[[d, b * len + t]];
                }
            }
        }
        dx
    }

    pub fn params(&self) -> Vec<&Param> {
        self.blocks
            .iter()
            .flat_map(|b| [&b.conv.weight, &b.conv.bias, &b.bn.gamma, &b.bn.beta])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.blocks
            .iter_mut()
            .flat_map(|b| {
                [
                    &mut b.conv.weight,
                    &mut b.conv.bias,
                    &mut b.bn.gamma,
                    &mut b.bn.beta,
                ]
            })
            .collect()
    }

    /// Normalization running statistics, named, in a fixed order.
    pub fn buffers(&self) -> Vec<(String, &Vec<f64>)> {
        self.blocks
            .iter()
            .enumerate()
            .flat_map(|(i, b)| {
                [
                    (format!("encoder.block{i}.bn.running_mean"), &b.bn.running_mean),
                    (format!("encoder.block{i}.bn.running_var"), &b.bn.running_var),
                ]
            })
            .collect()
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut Vec<f64>> {
        self.blocks
            .iter_mut()
            .flat_map(|b| [&mut b.bn.running_mean, &mut b.bn.running_var])
            .collect()
    }
}

/// `Linear -> ReLU -> Linear`.
#[derive(Debug, Clone)]
pub struct Projector {
    pub fc1: Linear,
    relu: Relu,
    pub fc2: Linear,
}

impl Projector {
    pub fn new<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Self {
        Self {
            fc1: Linear::new(
                "projector.fc1",
                config.representation_dim(),
                config.projector_hidden,
                rng,
            ),
            relu: Relu::default(),
            fc2: Linear::new(
                "projector.fc2",
                config.projector_hidden,
                config.projector_out,
                rng,
            ),
        }
    }

    pub fn forward(&mut self, rep: &Array2<f64>) -> Result<Array2<f64>> {
        if rep.ncols() != self.fc1.in_dim() {
            return Err(Error::shape("projector input", self.fc1.in_dim(), rep.ncols()));
        }
        let h = self.fc1.forward(rep);
        let h = self.relu.forward(h);
        Ok(self.fc2.forward(&h))
    }

    pub fn backward(&mut self, d_out: &Array2<f64>) -> Array2<f64> {
        let g = self.fc2.backward(d_out);
        let g = self.relu.backward(g);
        self.fc1.backward(&g)
    }

    pub fn params(&self) -> Vec<&Param> {
        vec![
            &self.fc1.weight,
            &self.fc1.bias,
            &self.fc2.weight,
            &self.fc2.bias,
        ]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![
            &mut self.fc1.weight,
            &mut self.fc1.bias,
            &mut self.fc2.weight,
            &mut self.fc2.bias,
        ]
    }
}

/// Encoder, projector and the SGD state that trains them.
#[derive(Debug, Clone)]
pub struct ModelState {
    pub config: ModelConfig,
    pub encoder: Encoder,
    pub projector: Projector,
    pub optimizer: Sgd,
}

impl ModelState {
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, optimizer: Sgd, rng: &mut R) -> Self {
        let encoder = Encoder::new(&config, rng);
        let projector = Projector::new(&config, rng);
        Self {
            config,
            encoder,
            projector,
            optimizer,
        }
    }

    /// Encoder then projector.
    pub fn embed(&mut self, x: &Array3<f64>, train: bool) -> Result<Array2<f64>> {
        let rep = self.encoder.forward(x, train)?;
        self.projector.forward(&rep)
    }

    /// Backward through projector and encoder, returning `dL/dx`.
    pub fn backward(&mut self, d_embed: &Array2<f64>) -> Array3<f64> {
        let d_rep = self.projector.backward(d_embed);
        self.encoder.backward(&d_rep)
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut p = self.encoder.params();
        p.extend(self.projector.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = self.encoder.params_mut();
        p.extend(self.projector.params_mut());
        p
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Param::zero_grad);
    }

    /// Applies one optimizer step to every encoder and projector parameter.
    pub fn step(&mut self) -> Result<()> {
        let Self {
            encoder,
            projector,
            optimizer,
            ..
        } = self;
        let mut params = encoder.params_mut();
        params.extend(projector.params_mut());
        optimizer.step_params(&mut params)
    }
}

/// Stacks `L x D` arrays into a `B x L x D` batch.
pub fn stack_batch(samples: &[&Array2<f64>]) -> Result<Array3<f64>> {
    let first = samples
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
    let (len, channels) = first.dim();
    let mut out = Array3::<f64>::zeros((samples.len(), len, channels));
    for (b, s) in samples.iter().enumerate() {
        if s.dim() != (len, channels) {
            return Err(Error::shape(
                "batch sample",
                format!("{len}x{channels}"),
                format!("{}x{}", s.nrows(), s.ncols()),
            ));
        }
        out.index_axis_mut(ndarray::Axis(0), b).assign(s);
    }
    Ok(out)
}
