//! Trainable parameters and the small layer vocabulary the networks are built from.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Negative slope used between hidden layers.
pub const HIDDEN_SLOPE: f64 = 0.2;

/// A named parameter. The wrapped tensor is a leaf that is replaced, never
/// mutated, when the optimizer writes new values.
#[derive(Debug, Clone)]
pub struct Param {
    name: String,
    value: Tensor,
    trainable: bool,
}

impl Param {
    pub fn new(name: impl Into<String>, data: Vec<f64>, shape: &[usize]) -> Result<Self> {
        Ok(Param {
            name: name.into(),
            value: Tensor::param(data, shape)?,
            trainable: true,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn tensor(&self) -> &Tensor {
        &self.value
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn data(&self) -> &[f64] {
        self.value.data()
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.value.grad()
    }

    pub fn zero_grad(&self) {
        self.value.zero_grad();
    }

    pub fn is_trainable(&self) -> bool {
        self.trainable
    }

    /// Frozen parameters are plain constants in the graph and never receive gradients.
    pub fn set_trainable(&mut self, trainable: bool) {
        self.trainable = trainable;
        self.value = self.value.with_requires_grad(trainable);
    }

    pub fn set_data(&mut self, data: Vec<f64>) -> Result<()> {
        if data.len() != self.value.numel() {
            return Err(Error::invalid(format!(
                "parameter {}: {} values for shape {:?}",
                self.name,
                data.len(),
                self.shape()
            )));
        }
        let shape = self.shape().to_vec();
        self.value = Tensor::new(data, &shape)?.with_requires_grad(self.trainable);
        Ok(())
    }
}

/// Anything that owns parameters, in a fixed order.
pub trait Module {
    fn params(&self) -> Vec<&Param>;
    fn params_mut(&mut self) -> Vec<&mut Param>;

    fn zero_grad(&self) {
        self.params().iter().for_each(|p| p.zero_grad());
    }

    fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.data().len()).sum()
    }

    fn set_trainable(&mut self, trainable: bool) {
        self.params_mut().into_iter().for_each(|p| p.set_trainable(trainable));
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Uniform with variance matched to a LeakyReLU of the given slope.
    HeUniform { slope: f64 },
    /// [`Init::HeUniform`] multiplied by `gain`.
    ScaledHeUniform { slope: f64, gain: f64 },
    Zeros,
}

impl Init {
    fn sample(self, rng: &mut ChaCha8Rng, n: usize, fan_in: usize) -> Vec<f64> {
        match self {
            Init::Zeros => vec![0.0; n],
            Init::HeUniform { slope } => {
                let bound = (6.0 / ((1.0 + slope * slope) * fan_in as f64)).sqrt();
                (0..n).map(|_| rng.random_range(-bound..bound)).collect()
            }
            Init::ScaledHeUniform { slope, gain } => Init::HeUniform { slope }
                .sample(rng, n, fan_in)
                .into_iter()
                .map(|v| v * gain)
                .collect(),
        }
    }
}

/// Square-kernel convolution with bias.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Param,
    pub bias: Param,
    pub stride: usize,
}

impl Conv2d {
    pub fn new(
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        init: Init,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let fan_in = c_in * kernel * kernel;
        let w = init.sample(rng, c_out * fan_in, fan_in);
        Ok(Conv2d {
            weight: Param::new(format!("{name}.weight"), w, &[c_out, c_in, kernel, kernel])?,
            bias: Param::new(format!("{name}.bias"), vec![0.0; c_out], &[c_out])?,
            stride,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.conv2d(self.weight.tensor(), self.bias.tensor(), self.stride)
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }
}

impl Module for Conv2d {
    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Affine map on a rank-1 input.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
}

impl Linear {
    pub fn new(name: &str, n_in: usize, n_out: usize, init: Init, rng: &mut ChaCha8Rng) -> Result<Self> {
        let w = init.sample(rng, n_in * n_out, n_in);
        Ok(Linear {
            weight: Param::new(format!("{name}.weight"), w, &[n_out, n_in])?,
            bias: Param::new(format!("{name}.bias"), vec![0.0; n_out], &[n_out])?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let n_in = self.weight.shape()[1];
        let n_out = self.weight.shape()[0];
        let col = x.reshape(&[n_in, 1])?;
        self.weight
            .tensor()
            .matmul(&col)?
            .reshape(&[n_out])?
            .add(self.bias.tensor())
    }
}

impl Module for Linear {
    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Convolutions with LeakyReLU between consecutive layers and a linear last layer.
#[derive(Debug, Clone)]
pub struct ConvStack {
    pub layers: Vec<Conv2d>,
    pub activate_last: bool,
}

impl ConvStack {
    /// `channels` lists every width including input and output, so
    /// `[3, 32, 32, 31]` builds three layers, all `kernel×kernel`.
    pub fn new(
        name: &str,
        channels: &[usize],
        kernel: usize,
        stride: usize,
        last_init: Init,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if channels.len() < 2 {
            return Err(Error::invalid("conv stack needs at least one layer"));
        }
        let n = channels.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let init = if i + 1 == n {
                    last_init
                } else {
                    Init::HeUniform { slope: HIDDEN_SLOPE }
                };
                Conv2d::new(&format!("{name}.{i}"), channels[i], channels[i + 1], kernel, stride, init, rng)
            })
            .collect::<Result<_>>()?;
        Ok(ConvStack {
            layers,
            activate_last: false,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let n = self.layers.len();
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(&h)?;
            if i + 1 < n || self.activate_last {
                h = h.leaky_relu(HIDDEN_SLOPE);
            }
        }
        Ok(h)
    }

    pub fn out_channels(&self) -> usize {
        self.layers.last().map_or(0, Conv2d::out_channels)
    }
}

impl Module for ConvStack {
    fn params(&self) -> Vec<&Param> {
        self.layers.iter().flat_map(Module::params).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers.iter_mut().flat_map(Module::params_mut).collect()
    }
}

/// Mean over the spatial axes of a `c×h×w` map, giving a length-`c` vector.
pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    if x.rank() != 3 {
        return Err(Error::invalid(format!("pooling needs c×h×w, got {:?}", x.shape())));
    }
    x.mean_axes(&[1, 2])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn frozen_param_gets_no_grad() {
        let mut p = Param::new("p", vec![1.0, 2.0], &[2]).unwrap();
        p.set_trainable(false);
        let x = Tensor::param(vec![3.0, 4.0], &[2]).unwrap();
        p.tensor().mul(&x).unwrap().sum().backward().unwrap();
        assert!(p.grad().is_none());
        assert_eq!(x.grad().unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn stack_shapes_and_zero_last_layer() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = ConvStack::new("g", &[3, 8, 5], 3, 1, Init::Zeros, &mut rng).unwrap();
        let x = Tensor::full(&[3, 6, 7], 0.3);
        let y = s.forward(&x).unwrap();
        assert_eq!(y.shape(), &[5, 6, 7]);
        assert!(y.data().iter().all(|&v| v == 0.0));
        assert_eq!(s.param_count(), 3 * 8 * 9 + 8 + 8 * 5 * 9 + 5);
    }

    #[test]
    fn linear_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut l = Linear::new("l", 2, 1, Init::Zeros, &mut rng).unwrap();
        l.weight.set_data(vec![2.0, -1.0]).unwrap();
        l.bias.set_data(vec![0.5]).unwrap();
        let y = l.forward(&Tensor::new(vec![3.0, 1.0], &[2]).unwrap()).unwrap();
        assert_eq!(y.to_vec(), vec![5.5]);
    }
}
