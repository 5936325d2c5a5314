use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Elu,
    Relu,
    Identity,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutputActivation {
    Identity,
    Sigmoid,
}

/// Shape of a fully-connected network with exactly one hidden layer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub input_dim: usize,
    pub hidden_units: usize,
    pub output_dim: usize,
    pub activation: Activation,
    pub output: OutputActivation,
    pub seed: u64,
}

impl MlpConfig {
    pub fn new(input_dim: usize, hidden_units: usize, output_dim: usize, seed: u64) -> Self {
        MlpConfig {
            input_dim,
            hidden_units,
            output_dim,
            activation: Activation::Elu,
            output: OutputActivation::Identity,
            seed,
        }
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn with_output(mut self, output: OutputActivation) -> Self {
        self.output = output;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(Error::invalid("mlp dimensions must be positive"));
        }
        if self.hidden_units == 0 {
            return Err(Error::invalid("hidden_units must be > 0"));
        }
        Ok(())
    }
}

/// One-hidden-layer perceptron: `act(x W1 + b1) W2 + b2`, optionally
/// followed by a sigmoid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub config: MlpConfig,
    /// `[W1 (in×h), b1 (1×h), W2 (h×out), b2 (1×out)]`
    pub params: Vec<Tensor>,
}

/// An [`Mlp`] whose parameters are registered on a [`Graph`].
#[derive(Clone, Copy, Debug)]
pub struct BoundMlp {
    pub vars: [Var; 4],
    activation: Activation,
    output: OutputActivation,
}

impl Mlp {
    /// Uniform He-style initialisation, `U(-√(6/fan_in), √(6/fan_in))`,
    /// zero biases.
    pub fn new(config: MlpConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut init = |fan_in: usize, fan_out: usize| {
            let bound = (6.0 / fan_in as f64).sqrt();
            let data = (0..fan_in * fan_out)
                .map(|_| rng.random_range(-bound..bound))
                .collect();
            Tensor::from_rows(fan_in, fan_out, data)
        };
        let w1 = init(config.input_dim, config.hidden_units)?;
        let w2 = init(config.hidden_units, config.output_dim)?;
        Ok(Mlp {
            config,
            params: vec![
                w1,
                Tensor::zeros(1, config.hidden_units),
                w2,
                Tensor::zeros(1, config.output_dim),
            ],
        })
    }

    /// All weights and biases zero.
    pub fn zeros(config: MlpConfig) -> Result<Self> {
        config.validate()?;
        Ok(Mlp {
            config,
            params: vec![
                Tensor::zeros(config.input_dim, config.hidden_units),
                Tensor::zeros(1, config.hidden_units),
                Tensor::zeros(config.hidden_units, config.output_dim),
                Tensor::zeros(1, config.output_dim),
            ],
        })
    }

    /// Exact identity map on `dim` inputs (identity activation, identity
    /// weights).
    pub fn identity(dim: usize, seed: u64) -> Result<Self> {
        let config = MlpConfig::new(dim, dim, dim, seed).with_activation(Activation::Identity);
        Mlp::from_params(
            config,
            vec![
                Tensor::identity(dim),
                Tensor::zeros(1, dim),
                Tensor::identity(dim),
                Tensor::zeros(1, dim),
            ],
        )
    }

    pub fn from_params(config: MlpConfig, params: Vec<Tensor>) -> Result<Self> {
        config.validate()?;
        let expected = [
            (config.input_dim, config.hidden_units),
            (1, config.hidden_units),
            (config.hidden_units, config.output_dim),
            (1, config.output_dim),
        ];
        if params.len() != 4
            || params
                .iter()
                .zip(expected)
                .any(|(p, (r, c))| p.rows() != r || p.cols() != c)
        {
            return Err(Error::shape(
                "Mlp::from_params",
                "parameter shapes do not match config",
            ));
        }
        Ok(Mlp { config, params })
    }

    pub fn bind(&self, g: &Graph) -> Result<BoundMlp> {
        self.bind_with(g, true)
    }

    fn bind_with(&self, g: &Graph, trainable: bool) -> Result<BoundMlp> {
        let vars = self
            .params
            .iter()
            .map(|p| {
                if trainable {
                    g.param(p.clone())
                } else {
                    g.constant(p.clone())
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(BoundMlp {
            vars: [vars[0], vars[1], vars[2], vars[3]],
            activation: self.config.activation,
            output: self.config.output,
        })
    }

    /// Forward pass without recording gradients.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let g = Graph::new();
        let bound = self.bind_frozen(&g)?;
        let xv = g.constant(x.clone())?;
        let out = bound.forward(&g, xv)?;
        Ok(g.value(out))
    }

    /// Pre-sigmoid output without recording gradients.
    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        let g = Graph::new();
        let bound = self.bind_frozen(&g)?;
        let xv = g.constant(x.clone())?;
        let out = bound.logits(&g, xv)?;
        Ok(g.value(out))
    }

    fn bind_frozen(&self, g: &Graph) -> Result<BoundMlp> {
        self.bind_with(g, false)
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }
}

impl BoundMlp {
    pub fn logits(&self, g: &Graph, x: Var) -> Result<Var> {
        let (_, in_cols) = g.shape(x);
        let (w_rows, _) = g.shape(self.vars[0]);
        if in_cols != w_rows {
            return Err(Error::shape(
                "forward_mlp",
                format!("input has {in_cols} columns, network expects {w_rows}"),
            ));
        }
        let h = g.matmul(x, self.vars[0])?;
        let h = g.add_row(h, self.vars[1])?;
        let h = match self.activation {
            Activation::Elu => g.elu(h)?,
            Activation::Relu => g.relu(h)?,
            Activation::Identity => h,
        };
        let o = g.matmul(h, self.vars[2])?;
        g.add_row(o, self.vars[3])
    }

    pub fn forward(&self, g: &Graph, x: Var) -> Result<Var> {
        let o = self.logits(g, x)?;
        match self.output {
            OutputActivation::Identity => Ok(o),
            OutputActivation::Sigmoid => g.sigmoid(o),
        }
    }
}
