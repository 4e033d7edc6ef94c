//! Feed-forward networks used as barrier candidates.
//!
//! A [`Network`] is a chain of dense layers, each followed by either a ReLU or
//! the identity. Weights are stored row-major (`out x in`).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    #[serde(rename = "in")]
    pub input_width: usize,
    #[serde(rename = "out")]
    pub output_width: usize,
    pub activation: Activation,
}

/// Weight matrix (row-major, `out x in`) and bias of one dense layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LayerParams {
    pub fn zeros(spec: &LayerSpec) -> Self {
        Self {
            weight: vec![0.0; spec.input_width * spec.output_width],
            bias: vec![0.0; spec.output_width],
        }
    }

    #[inline]
    pub fn row(&self, i: usize, width: usize) -> &[f64] {
        &self.weight[i * width..(i + 1) * width]
    }
}

/// Gradient of a scalar with respect to every network parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub layers: Vec<LayerParams>,
}

impl GradientSet {
    pub fn zeros_like(net: &Network) -> Self {
        Self {
            layers: net.specs().iter().map(LayerParams::zeros).collect(),
        }
    }

    /// `self += scale * other`
    pub fn add_scaled(&mut self, other: &GradientSet, scale: f64) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weight.iter_mut().zip(&b.weight) {
                *x += scale * y;
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += scale * y;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(f64::is_finite)
    }

    /// Entry at flat index, same ordering as [`Network::param_mut`].
    pub fn get(&self, flat: usize) -> f64 {
        self.iter().nth(flat).expect("gradient index out of range")
    }

    /// Flat iteration in parameter order: per layer, weights then biases.
    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(l.bias.iter()).copied())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    specs: Vec<LayerSpec>,
    params: Vec<LayerParams>,
}

impl Network {
    /// Builds a network, checking that widths chain and shapes match.
    pub fn new(specs: Vec<LayerSpec>, params: Vec<LayerParams>) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::InvalidNetwork("network has no layers".into()));
        }
        if specs.len() != params.len() {
            return Err(Error::InvalidNetwork(format!(
                "{} layer specs but {} parameter blocks",
                specs.len(),
                params.len()
            )));
        }
        for (k, (s, p)) in specs.iter().zip(&params).enumerate() {
            if s.input_width == 0 || s.output_width == 0 {
                return Err(Error::InvalidNetwork(format!("layer {k} has zero width")));
            }
            if k > 0 && specs[k - 1].output_width != s.input_width {
                return Err(Error::InvalidNetwork(format!(
                    "layer {k} expects {} inputs but layer {} produces {}",
                    s.input_width,
                    k - 1,
                    specs[k - 1].output_width
                )));
            }
            if p.weight.len() != s.input_width * s.output_width || p.bias.len() != s.output_width {
                return Err(Error::InvalidNetwork(format!("layer {k} parameter shape mismatch")));
            }
            if !p.weight.iter().chain(&p.bias).all(|v| v.is_finite()) {
                return Err(Error::InvalidNetwork(format!("layer {k} has non-finite parameters")));
            }
        }
        Ok(Self { specs, params })
    }

    /// Barrier architecture: `hidden` ReLU layers followed by a 1-output identity layer.
    /// Parameters are drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn barrier<R: Rng + ?Sized>(input: usize, hidden: &[usize], rng: &mut R) -> Self {
        let mut specs = Vec::with_capacity(hidden.len() + 1);
        let mut width = input;
        for &h in hidden {
            specs.push(LayerSpec {
                input_width: width,
                output_width: h,
                activation: Activation::Relu,
            });
            width = h;
        }
        specs.push(LayerSpec {
            input_width: width,
            output_width: 1,
            activation: Activation::Identity,
        });
        let params = specs
            .iter()
            .map(|s| {
                let bound = 1.0 / (s.input_width as f64).sqrt();
                let mut draw = || rng.random_range(-bound..=bound);
                LayerParams {
                    weight: (0..s.input_width * s.output_width).map(|_| draw()).collect(),
                    bias: (0..s.output_width).map(|_| draw()).collect(),
                }
            })
            .collect();
        Self { specs, params }
    }

    /// A network that outputs `c` everywhere (zero weights, output bias `c`).
    pub fn constant(input: usize, hidden: &[usize], c: f64) -> Self {
        let mut specs = Vec::with_capacity(hidden.len() + 1);
        let mut width = input;
        for &h in hidden {
            specs.push(LayerSpec { input_width: width, output_width: h, activation: Activation::Relu });
            width = h;
        }
        specs.push(LayerSpec { input_width: width, output_width: 1, activation: Activation::Identity });
        let mut params: Vec<LayerParams> = specs.iter().map(LayerParams::zeros).collect();
        params.last_mut().unwrap().bias[0] = c;
        Self { specs, params }
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn params(&self) -> &[LayerParams] {
        &self.params
    }

    /// Mutable parameter access for optimizers. Shapes must not be changed.
    pub fn params_mut(&mut self) -> &mut [LayerParams] {
        &mut self.params
    }

    pub fn input_dim(&self) -> usize {
        self.specs[0].input_width
    }

    pub fn output_dim(&self) -> usize {
        self.specs.last().unwrap().output_width
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(|p| p.weight.len() + p.bias.len()).sum()
    }

    /// A barrier network has one output and an identity final layer.
    pub fn is_barrier_shaped(&self) -> bool {
        let last = self.specs.last().unwrap();
        last.output_width == 1 && last.activation == Activation::Identity
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Full output vector.
    pub fn forward_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self.forward_unchecked(x))
    }

    pub(crate) fn forward_unchecked(&self, x: &[f64]) -> Vec<f64> {
        let mut a = x.to_vec();
        for (s, p) in self.specs.iter().zip(&self.params) {
            let mut z = p.bias.clone();
            for (i, zi) in z.iter_mut().enumerate() {
                let row = p.row(i, s.input_width);
                *zi += row.iter().zip(&a).map(|(w, v)| w * v).sum::<f64>();
                *zi = s.activation.apply(*zi);
            }
            a = z;
        }
        a
    }

    /// Scalar output `B(x)` of a one-output network.
    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        if self.output_dim() != 1 {
            return Err(Error::InvalidNetwork(format!(
                "scalar forward on a network with {} outputs",
                self.output_dim()
            )));
        }
        Ok(self.forward_vec(x)?[0])
    }

    /// Gradient of `upstream * B(x)` with respect to all parameters.
    /// The ReLU subgradient at 0 is 0.
    pub fn grad_params(&self, x: &[f64], upstream: f64) -> Result<GradientSet> {
        self.check_input(x)?;
        if self.output_dim() != 1 {
            return Err(Error::InvalidNetwork("grad_params needs a scalar network".into()));
        }
        // forward, keeping layer inputs and pre-activations
        let mut inputs: Vec<Vec<f64>> = Vec::with_capacity(self.specs.len());
        let mut pre: Vec<Vec<f64>> = Vec::with_capacity(self.specs.len());
        let mut a = x.to_vec();
        for (s, p) in self.specs.iter().zip(&self.params) {
            let mut z = p.bias.clone();
            for (i, zi) in z.iter_mut().enumerate() {
                *zi += p.row(i, s.input_width).iter().zip(&a).map(|(w, v)| w * v).sum::<f64>();
            }
            let next = z.iter().map(|&v| s.activation.apply(v)).collect();
            inputs.push(std::mem::replace(&mut a, next));
            pre.push(z);
        }

        let mut grads = GradientSet::zeros_like(self);
        let mut delta = vec![upstream];
        for k in (0..self.specs.len()).rev() {
            let s = &self.specs[k];
            if s.activation == Activation::Relu {
                for (d, z) in delta.iter_mut().zip(&pre[k]) {
                    if *z <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let g = &mut grads.layers[k];
            let mut back = vec![0.0; s.input_width];
            for (i, &d) in delta.iter().enumerate() {
                g.bias[i] += d;
                if d == 0.0 {
                    continue;
                }
                let row = self.params[k].row(i, s.input_width);
                let grow = &mut g.weight[i * s.input_width..(i + 1) * s.input_width];
                for j in 0..s.input_width {
                    grow[j] += d * inputs[k][j];
                    back[j] += d * row[j];
                }
            }
            delta = back;
        }
        Ok(grads)
    }

    /// Smallest |pre-activation| over all ReLU units at `x`; used to keep
    /// finite-difference checks away from kinks.
    pub fn min_relu_margin(&self, x: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        let mut a = x.to_vec();
        let mut margin = f64::INFINITY;
        for (s, p) in self.specs.iter().zip(&self.params) {
            let mut z = p.bias.clone();
            for (i, zi) in z.iter_mut().enumerate() {
                *zi += p.row(i, s.input_width).iter().zip(&a).map(|(w, v)| w * v).sum::<f64>();
                if s.activation == Activation::Relu {
                    margin = margin.min(zi.abs());
                }
                *zi = s.activation.apply(*zi);
            }
            a = z;
        }
        Ok(margin)
    }

    /// Parameter at flat index `flat` (per layer: weights row-major, then biases).
    pub fn param_mut(&mut self, flat: usize) -> &mut f64 {
        let mut k = flat;
        for p in &mut self.params {
            let (nw, nb) = (p.weight.len(), p.bias.len());
            if k < nw {
                return &mut p.weight[k];
            }
            if k < nw + nb {
                return &mut p.bias[k - nw];
            }
            k -= nw + nb;
        }
        panic!("parameter index {flat} out of range");
    }

    /// Multiplies every final-layer weight and bias by `s`.
    pub fn scale_output(&mut self, s: f64) {
        let last = self.params.last_mut().unwrap();
        last.weight.iter_mut().for_each(|w| *w *= s);
        last.bias.iter_mut().for_each(|b| *b *= s);
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(crate::json::to_string_pretty(&NetworkFile::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: NetworkFile = serde_json::from_str(s)?;
        file.try_into()
    }
}

/// On-disk layout: `layers` as `{in, out, activation}` and `params` as
/// row-major nested weight rows plus bias vectors.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkFile {
    layers: Vec<LayerSpec>,
    params: Vec<ParamsFile>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamsFile {
    weight: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

impl From<&Network> for NetworkFile {
    fn from(net: &Network) -> Self {
        Self {
            layers: net.specs.clone(),
            params: net
                .specs
                .iter()
                .zip(&net.params)
                .map(|(s, p)| ParamsFile {
                    weight: p.weight.chunks(s.input_width).map(<[f64]>::to_vec).collect(),
                    bias: p.bias.clone(),
                })
                .collect(),
        }
    }
}

impl TryFrom<NetworkFile> for Network {
    type Error = Error;

    fn try_from(f: NetworkFile) -> Result<Self> {
        let mut params = Vec::with_capacity(f.params.len());
        for (k, p) in f.params.into_iter().enumerate() {
            let width = f.layers.get(k).map(|s| s.input_width).unwrap_or(0);
            if p.weight.iter().any(|row| row.len() != width) {
                return Err(Error::InvalidNetwork(format!("layer {k} weight rows must have {width} entries")));
            }
            params.push(LayerParams {
                weight: p.weight.into_iter().flatten().collect(),
                bias: p.bias,
            });
        }
        Network::new(f.layers, params)
    }
}
