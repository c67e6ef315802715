use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Scalar;

pub const WEIGHTS_VERSION: u32 = 1;

/// Network dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetShape {
    pub context_length: usize,
    pub horizon: usize,
    /// Number of blocks, each a trunk plus backcast and forecast heads.
    pub stacks: usize,
    /// Fully connected ReLU layers per trunk.
    pub layers: usize,
    pub width: usize,
}

impl NetShape {
    pub fn validate(&self) -> Result<()> {
        if self.context_length == 0 || self.horizon == 0 || self.stacks == 0 || self.layers == 0 || self.width == 0 {
            return Err(Error::Config(format!("all network dimensions must be positive: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Dense {
    offset: usize,
    inputs: usize,
    outputs: usize,
}

impl Dense {
    fn weights(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.inputs * self.outputs
    }

    fn bias(&self) -> std::ops::Range<usize> {
        let b = self.offset + self.inputs * self.outputs;
        b..b + self.outputs
    }

    fn size(&self) -> usize {
        (self.inputs + 1) * self.outputs
    }

    fn forward<T: Scalar>(&self, params: &[T], input: &[T]) -> Vec<T> {
        let w = &params[self.weights()];
        let b = &params[self.bias()];
        (0..self.outputs)
            .map(|o| {
                let row = &w[o * self.inputs..(o + 1) * self.inputs];
                row.iter().zip(input).fold(b[o], |acc, (&wi, &xi)| acc + wi * xi)
            })
            .collect()
    }

    /// Accumulates parameter gradients and returns the input gradient.
    fn backward<T: Scalar>(&self, params: &[T], grads: &mut [T], input: &[T], dout: &[T]) -> Vec<T> {
        let mut din = vec![T::zero(); self.inputs];
        let wr = self.weights();
        let br = self.bias();
        for o in 0..self.outputs {
            let d = dout[o];
            if d == T::zero() {
                continue;
            }
            grads[br.start + o] += d;
            let base = o * self.inputs;
            for i in 0..self.inputs {
                grads[wr.start + base + i] += d * input[i];
                din[i] += params[wr.start + base + i] * d;
            }
        }
        din
    }
}

#[derive(Debug, Clone, PartialEq)]
struct BlockLayout {
    trunk: Vec<Dense>,
    backcast: Dense,
    forecast: Dense,
}

fn layout(shape: &NetShape) -> (Vec<BlockLayout>, usize) {
    let mut offset = 0;
    let mut dense = |inputs: usize, outputs: usize| {
        let d = Dense {
            offset,
            inputs,
            outputs,
        };
        offset += d.size();
        d
    };
    let blocks = (0..shape.stacks)
        .map(|_| {
            let trunk = (0..shape.layers)
                .map(|l| dense(if l == 0 { shape.context_length } else { shape.width }, shape.width))
                .collect();
            let backcast = dense(shape.width, shape.context_length);
            let forecast = dense(shape.width, shape.horizon);
            BlockLayout {
                trunk,
                backcast,
                forecast,
            }
        })
        .collect();
    (blocks, offset)
}

/// Per-block outputs of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace<T> {
    pub backcasts: Vec<Vec<T>>,
    pub forecasts: Vec<Vec<T>>,
    /// Input left over after the last block's backcast is removed.
    pub residual: Vec<T>,
    pub forecast: Vec<T>,
}

struct BlockCache<T> {
    input: Vec<T>,
    /// ReLU activations per trunk layer.
    acts: Vec<Vec<T>>,
}

/// Doubly residual stack of fully connected blocks with a flat parameter buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisNet<T> {
    shape: NetShape,
    blocks: Vec<BlockLayout>,
    params: Vec<T>,
}

impl<T: Scalar> BasisNet<T> {
    /// He-normal trunk weights, unit-variance-scaled heads, zero biases.
    pub fn new(shape: NetShape, seed: u64) -> Result<Self> {
        shape.validate()?;
        let (blocks, n) = layout(&shape);
        let mut params = vec![T::zero(); n];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for b in &blocks {
            let heads = [(&b.backcast, 1.0), (&b.forecast, 1.0)];
            let trunk = b.trunk.iter().map(|d| (d, 2.0));
            for (d, gain) in trunk.chain(heads) {
                let std = (gain / d.inputs as f64).sqrt();
                let normal = Normal::new(0.0, std).expect("positive std");
                for p in &mut params[d.weights()] {
                    *p = T::of(normal.sample(&mut rng));
                }
            }
        }
        Ok(Self { shape, blocks, params })
    }

    /// Network with every parameter zero.
    pub fn zeros(shape: NetShape) -> Result<Self> {
        shape.validate()?;
        let (blocks, n) = layout(&shape);
        Ok(Self {
            shape,
            blocks,
            params: vec![T::zero(); n],
        })
    }

    pub fn shape(&self) -> &NetShape {
        &self.shape
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    /// Parameter index ranges of one block's backcast head (weights, bias).
    pub fn backcast_head(&self, block: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let d = self.blocks[block].backcast;
        (d.weights(), d.bias())
    }

    /// Parameter index ranges of one block's forecast head (weights, bias).
    pub fn forecast_head(&self, block: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let d = self.blocks[block].forecast;
        (d.weights(), d.bias())
    }

    fn check_context(&self, context: &[T]) -> Result<()> {
        if context.len() != self.shape.context_length {
            return Err(Error::Dimension(format!(
                "context has {} values, network expects {}",
                context.len(),
                self.shape.context_length
            )));
        }
        if context.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("context holds non-finite values".into()));
        }
        Ok(())
    }

    fn run(&self, context: &[T]) -> (ForwardTrace<T>, Vec<BlockCache<T>>) {
        let mut x = context.to_vec();
        let mut out = vec![T::zero(); self.shape.horizon];
        let mut trace = ForwardTrace {
            backcasts: Vec::with_capacity(self.blocks.len()),
            forecasts: Vec::with_capacity(self.blocks.len()),
            residual: Vec::new(),
            forecast: Vec::new(),
        };
        let mut caches = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let mut acts: Vec<Vec<T>> = Vec::with_capacity(b.trunk.len());
            for (l, d) in b.trunk.iter().enumerate() {
                let input = if l == 0 { &x } else { &acts[l - 1] };
                let mut z = d.forward(&self.params, input);
                for v in &mut z {
                    if *v < T::zero() {
                        *v = T::zero();
                    }
                }
                acts.push(z);
            }
            let last = acts.last().expect("trunk has at least one layer");
            let back = b.backcast.forward(&self.params, last);
            let fore = b.forecast.forward(&self.params, last);
            for (o, f) in out.iter_mut().zip(&fore) {
                *o += *f;
            }
            let next: Vec<T> = x.iter().zip(&back).map(|(a, b)| *a - *b).collect();
            caches.push(BlockCache { input: x, acts });
            trace.backcasts.push(back);
            trace.forecasts.push(fore);
            x = next;
        }
        trace.residual = x;
        trace.forecast = out;
        (trace, caches)
    }

    /// Forecast for an already scaled context.
    pub fn forward(&self, context: &[T]) -> Result<Vec<T>> {
        self.check_context(context)?;
        Ok(self.run(context).0.forecast)
    }

    pub fn forward_trace(&self, context: &[T]) -> Result<ForwardTrace<T>> {
        self.check_context(context)?;
        Ok(self.run(context).0)
    }

    /// Forward pass plus gradients of `dloss/dforecast` back to the parameters,
    /// accumulated into `grads`.
    pub(crate) fn forward_backward(&self, context: &[T], dloss: impl FnOnce(&[T]) -> (T, Vec<T>), grads: &mut [T]) -> T {
        let (trace, caches) = self.run(context);
        let (loss, dforecast) = dloss(&trace.forecast);
        // Gradient w.r.t. the input of the block after the current one.
        let mut dnext = vec![T::zero(); self.shape.context_length];
        for (b, cache) in self.blocks.iter().zip(&caches).rev() {
            let last = cache.acts.last().expect("trunk has at least one layer");
            let dback: Vec<T> = dnext.iter().map(|d| -*d).collect();
            let mut dact = b.forecast.backward(&self.params, grads, last, &dforecast);
            let dact_b = b.backcast.backward(&self.params, grads, last, &dback);
            for (a, c) in dact.iter_mut().zip(dact_b) {
                *a += c;
            }
            for l in (0..b.trunk.len()).rev() {
                for (d, a) in dact.iter_mut().zip(&cache.acts[l]) {
                    if *a <= T::zero() {
                        *d = T::zero();
                    }
                }
                let input = if l == 0 { &cache.input } else { &cache.acts[l - 1] };
                dact = b.trunk[l].backward(&self.params, grads, input, &dact);
            }
            for (n, d) in dnext.iter_mut().zip(dact) {
                *n += d;
            }
        }
        loss
    }
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "T: Serialize + DeserializeOwned")]
struct Tensor<T> {
    name: String,
    shape: [usize; 2],
    values: Vec<T>,
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "T: Serialize + DeserializeOwned")]
struct WeightsDoc<T> {
    version: u32,
    shape: NetShape,
    tensors: Vec<Tensor<T>>,
}

impl<T: Scalar + Serialize + DeserializeOwned> BasisNet<T> {
    /// JSON document with row-major `[outputs, inputs]` weight matrices and biases.
    pub fn to_json(&self) -> Result<String> {
        let mut tensors = Vec::new();
        for (k, b) in self.blocks.iter().enumerate() {
            let named = b
                .trunk
                .iter()
                .enumerate()
                .map(|(l, d)| (format!("block{k}.fc{l}"), d))
                .chain([(format!("block{k}.backcast"), &b.backcast), (format!("block{k}.forecast"), &b.forecast)]);
            for (name, d) in named {
                tensors.push(Tensor {
                    name: format!("{name}.weight"),
                    shape: [d.outputs, d.inputs],
                    values: self.params[d.weights()].to_vec(),
                });
                tensors.push(Tensor {
                    name: format!("{name}.bias"),
                    shape: [d.outputs, 1],
                    values: self.params[d.bias()].to_vec(),
                });
            }
        }
        let doc = WeightsDoc {
            version: WEIGHTS_VERSION,
            shape: self.shape,
            tensors,
        };
        Ok(serde_json::to_string(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: WeightsDoc<T> = serde_json::from_str(text)?;
        if doc.version != WEIGHTS_VERSION {
            return Err(Error::Data(format!("unsupported weights version {}", doc.version)));
        }
        let mut net = Self::zeros(doc.shape)?;
        let mut at = 0;
        for t in doc.tensors {
            if t.values.len() != t.shape[0] * t.shape[1] || at + t.values.len() > net.params.len() {
                return Err(Error::Data(format!("tensor `{}` does not fit the declared shape", t.name)));
            }
            net.params[at..at + t.values.len()].copy_from_slice(&t.values);
            at += t.values.len();
        }
        if at != net.params.len() {
            return Err(Error::Data(format!("weights hold {at} values, network needs {}", net.params.len())));
        }
        Ok(net)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape(stacks: usize) -> NetShape {
        NetShape {
            context_length: 6,
            horizon: 3,
            stacks,
            layers: 2,
            width: 5,
        }
    }

    #[test]
    fn zero_network_forecasts_zero() {
        let net = BasisNet::<f64>::zeros(shape(2)).unwrap();
        assert_eq!(net.forward(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn single_block_output_is_its_forecast_head() {
        let net = BasisNet::<f64>::new(shape(1), 3).unwrap();
        let t = net.forward_trace(&[1.0, -2.0, 3.0, 0.5, 5.0, 6.0]).unwrap();
        assert_eq!(t.forecast, t.forecasts[0]);
    }

    #[test]
    fn identity_backcast_leaves_zero_residual() {
        let mut net = BasisNet::<f64>::new(shape(2), 5).unwrap();
        // Make block 0's trunk pass positive inputs through and its backcast
        // head reproduce them.
        let s = shape(2);
        let (bw, bb) = net.backcast_head(0);
        let p = net.params_mut();
        for v in &mut p[0..(s.context_length + 1) * s.width + (s.width + 1) * s.width] {
            *v = 0.0;
        }
        // fc0: width 5 from 6 inputs; route input i to unit i for i < 5.
        for i in 0..5 {
            p[i * 6 + i] = 1.0;
        }
        // fc1: identity 5x5, offset after fc0.
        let fc1 = 7 * 5;
        for i in 0..5 {
            p[fc1 + i * 5 + i] = 1.0;
        }
        for v in &mut p[bw.clone()] {
            *v = 0.0;
        }
        for v in &mut p[bb] {
            *v = 0.0;
        }
        for i in 0..5 {
            p[bw.start + i * 5 + i] = 1.0;
        }
        // Input 5 has no trunk route; keep it zero so the backcast is exact.
        let x = [1.0, 2.0, 3.0, 4.0, 5.0, 0.0];
        let t = net.forward_trace(&x).unwrap();
        assert_eq!(t.backcasts[0], x.to_vec());
        let second_input: Vec<f64> = x.iter().zip(&t.backcasts[0]).map(|(a, b)| a - b).collect();
        assert_eq!(second_input, vec![0.0; 6]);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let net = BasisNet::<f32>::new(shape(1), 0).unwrap();
        assert!(net.forward(&[1.0; 5]).is_err());
    }

    #[test]
    fn weights_round_trip() {
        let net = BasisNet::<f64>::new(shape(2), 9).unwrap();
        let back = BasisNet::<f64>::from_json(&net.to_json().unwrap()).unwrap();
        assert_eq!(back.params(), net.params());
        assert_eq!(back.shape(), net.shape());
    }
}
