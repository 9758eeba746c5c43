//! Named parameter storage, dense layers and multilayer perceptrons.

use std::collections::HashMap;

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use super::tape::{Matrix, Tape, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamRole {
    Weight,
    Bias,
    Other,
}

/// Ordered, named collection of trainable tensors.
#[derive(Clone, Debug, Default)]
pub struct ParamSet {
    names: Vec<String>,
    roles: Vec<ParamRole>,
    values: Vec<Matrix>,
    index: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, role: ParamRole, value: Matrix) -> ParamId {
        let name = name.into();
        assert!(
            !self.index.contains_key(&name),
            "duplicate parameter name {name}"
        );
        self.index.insert(name.clone(), self.values.len());
        self.names.push(name);
        self.roles.push(role);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.values[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Matrix> {
        self.index.get(name).map(|&i| &self.values[i])
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn role(&self, id: ParamId) -> ParamRole {
        self.roles[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.names.iter().map(String::as_str).zip(self.values.iter())
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    /// Sum of squared entries over all weight matrices (biases excluded).
    pub fn weight_sq_norm(&self) -> f64 {
        self.values
            .iter()
            .zip(&self.roles)
            .filter(|(_, r)| **r == ParamRole::Weight)
            .map(|(v, _)| v.iter().map(|x| x * x).sum::<f64>())
            .sum()
    }

    /// Replace the value of `name`, checking the shape.
    pub fn set(&mut self, name: &str, value: Matrix) -> Result<()> {
        let i = *self
            .index
            .get(name)
            .ok_or_else(|| Error::Contract(format!("unknown parameter `{name}`")))?;
        if self.values[i].dim() != value.dim() {
            return Err(Error::Shape {
                op: "set parameter",
                lhs: self.values[i].dim(),
                rhs: value.dim(),
            });
        }
        self.values[i] = value;
        Ok(())
    }

    /// Put every parameter on the tape as a trainable leaf.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        Bound {
            vars: self.values.iter().map(|v| tape.param(v.clone())).collect(),
        }
    }

    /// Put every parameter on the tape as a frozen constant.
    pub fn bind_frozen(&self, tape: &mut Tape) -> Bound {
        Bound {
            vars: self.values.iter().map(|v| tape.constant(v.clone())).collect(),
        }
    }
}

/// Tape handles for a bound [`ParamSet`].
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
    Softplus,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Identity => x,
            Activation::Relu => tape.relu(x),
            Activation::Sigmoid => tape.sigmoid(x),
            Activation::Softplus => tape.softplus(x),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    /// Kaiming-uniform on fan-in, for layers feeding a ReLU.
    KaimingUniform,
    /// Xavier/Glorot-uniform, for output layers.
    XavierUniform,
}

/// Affine layer `y = x·Wᵀ + b` with `W: [out × in]`, `b: [1 × out]`.
#[derive(Clone, Copy, Debug)]
pub struct DenseLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub output: usize,
}

impl DenseLayer {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParamSet,
        name: &str,
        input: usize,
        output: usize,
        init: Init,
        rng: &mut R,
    ) -> Self {
        let bound = match init {
            Init::KaimingUniform => (6.0 / input as f64).sqrt(),
            Init::XavierUniform => (6.0 / (input + output) as f64).sqrt(),
        };
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        let w = Array2::from_shape_fn((output, input), |_| dist.sample(rng));
        let weight = params.insert(format!("{name}.weight"), ParamRole::Weight, w);
        let bias = params.insert(
            format!("{name}.bias"),
            ParamRole::Bias,
            Matrix::zeros((1, output)),
        );
        Self {
            weight,
            bias,
            input,
            output,
        }
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
        tape.linear(x, bound.var(self.weight), bound.var(self.bias))
    }
}

/// Stack of dense layers with ReLU between them and a caller-chosen output
/// activation.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<DenseLayer>,
}

impl Mlp {
    /// Layer sizes `[in, h1, ..., out]`. The last layer gets `last_init`.
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParamSet,
        name: &str,
        sizes: &[usize],
        last_init: Init,
        rng: &mut R,
    ) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs at least one layer");
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let init = if i + 1 == n {
                    last_init
                } else {
                    Init::KaimingUniform
                };
                DenseLayer::new(params, &format!("{name}.{i}"), sizes[i], sizes[i + 1], init, rng)
            })
            .collect();
        Self { layers }
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].input
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().expect("non-empty").output
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var, output: Activation) -> Result<Var> {
        mlp_forward(tape, bound, &self.layers, output, x)
    }
}

/// Dense layers with ReLU between hidden layers and `output` after the last.
pub fn mlp_forward(
    tape: &mut Tape,
    bound: &Bound,
    layers: &[DenseLayer],
    output: Activation,
    x: Var,
) -> Result<Var> {
    let mut h = x;
    for (i, layer) in layers.iter().enumerate() {
        let (rows, cols) = tape.shape(h);
        if cols != layer.input {
            return Err(Error::Shape {
                op: "mlp_forward",
                lhs: (rows, cols),
                rhs: (layer.output, layer.input),
            });
        }
        h = layer.forward(tape, bound, h)?;
        h = if i + 1 < layers.len() {
            tape.relu(h)
        } else {
            output.apply(tape, h)
        };
    }
    Ok(h)
}
