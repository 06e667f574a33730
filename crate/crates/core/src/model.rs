//! ReLU multilayer perceptrons used as teachers and students.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpConfig {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub num_classes: usize,
    pub seed: u64,
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden.contains(&0) {
            return Err(Error::Parameter(format!(
                "layer widths must be at least 1: input {} hidden {:?}",
                self.input_dim, self.hidden
            )));
        }
        if self.num_classes < 2 {
            return Err(Error::Parameter(format!(
                "num_classes must be at least 2, got {}",
                self.num_classes
            )));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` for each layer, input to logits.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut widths = Vec::with_capacity(self.hidden.len() + 2);
        widths.push(self.input_dim);
        widths.extend(&self.hidden);
        widths.push(self.num_classes);
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| i * o + o).sum()
    }
}

/// One affine layer, `x · weight + bias` with weight stored fan_in × fan_out.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    config: MlpConfig,
    layers: Vec<Linear>,
}

/// Tape handles for a model's parameters, in layer order.
#[derive(Debug, Clone)]
pub struct ParamVars(pub Vec<(Var, Var)>);

impl Mlp {
    /// He initialization: weights ~ N(0, 2/fan_in), drawn layer by layer in
    /// row-major order from `Rng::new(config.seed)`; biases zero.
    pub fn init(config: MlpConfig) -> Result<Mlp> {
        config.validate()?;
        let mut rng = Rng::new(config.seed);
        let layers = config
            .layer_dims()
            .into_iter()
            .map(|(fan_in, fan_out)| {
                let std = (2.0 / fan_in as f64).sqrt();
                let data = (0..fan_in * fan_out).map(|_| std * rng.gaussian()).collect();
                Linear {
                    weight: Tensor::from_raw(fan_in, fan_out, data),
                    bias: Tensor::zeros(1, fan_out),
                }
            })
            .collect();
        Ok(Mlp { config, layers })
    }

    /// Builds a model from explicit layers, checking they chain per `config`.
    pub fn from_layers(config: MlpConfig, layers: Vec<Linear>) -> Result<Mlp> {
        config.validate()?;
        let dims = config.layer_dims();
        if dims.len() != layers.len() {
            return Err(Error::Contract(format!(
                "config has {} layers, got {}",
                dims.len(),
                layers.len()
            )));
        }
        for ((fan_in, fan_out), layer) in dims.iter().zip(&layers) {
            if layer.weight.shape() != (*fan_in, *fan_out) || layer.bias.shape() != (1, *fan_out) {
                return Err(Error::Dimension {
                    op: "mlp layer",
                    left: (*fan_in, *fan_out),
                    right: layer.weight.shape(),
                });
            }
        }
        Ok(Mlp { config, layers })
    }

    pub fn config(&self) -> &MlpConfig {
        &self.config
    }

    pub fn layers(&self) -> &[Linear] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Linear] {
        &mut self.layers
    }

    pub fn param_count(&self) -> usize {
        self.config.param_count()
    }

    /// Weight then bias of each layer, in layer order.
    pub fn parameters(&self) -> impl Iterator<Item = &Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias])
    }

    pub fn parameters_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias])
    }

    fn check_input(&self, shape: (usize, usize)) -> Result<()> {
        if shape.1 != self.config.input_dim {
            return Err(Error::Dimension {
                op: "mlp forward",
                left: shape,
                right: (shape.0, self.config.input_dim),
            });
        }
        Ok(())
    }

    /// Logits for a batch, outside any tape.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x.shape())?;
        let last = self.layers.len() - 1;
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            h = h.matmul(&layer.weight)?.add_row(&layer.bias)?;
            if i < last {
                h = h.relu();
            }
        }
        Ok(h)
    }

    /// Registers every parameter as a tape leaf.
    pub fn register(&self, tape: &mut Tape) -> ParamVars {
        ParamVars(
            self.layers
                .iter()
                .map(|l| (tape.leaf(l.weight.clone()), tape.leaf(l.bias.clone())))
                .collect(),
        )
    }

    /// Records the forward pass on `tape`; same arithmetic as [`Mlp::forward`].
    pub fn forward_on(&self, tape: &mut Tape, params: &ParamVars, x: Var) -> Result<Var> {
        self.check_input(tape.value(x).shape())?;
        let last = params.0.len() - 1;
        let mut h = x;
        for (i, &(w, b)) in params.0.iter().enumerate() {
            h = tape.matmul(h, w)?;
            h = tape.add_row(h, b)?;
            if i < last {
                h = tape.relu(h);
            }
        }
        Ok(h)
    }
}
