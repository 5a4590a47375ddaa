use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Real;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply<F: Real>(self, x: F) -> F {
        match self {
            Activation::Tanh => x.act_tanh(),
            Activation::Relu => x.max(F::zero()),
        }
    }

    /// Derivative expressed through the activation's output.
    fn derivative_from_output<F: Real>(self, y: F) -> F {
        match self {
            Activation::Tanh => F::one() - y * y,
            Activation::Relu => {
                if y > F::zero() {
                    F::one()
                } else {
                    F::zero()
                }
            }
        }
    }
}

/// Dense feed-forward network with a linear output layer.
///
/// All parameters live in one flat buffer so optimizers and gradient checks
/// can treat them uniformly. Layer `l` stores its weight as an `in x out`
/// row-major block followed by its `out` biases.
#[derive(Clone, Debug, PartialEq)]
pub struct Network<F: Real = f32> {
    sizes: Vec<usize>,
    activations: Vec<Activation>,
    params: Vec<F>,
}

/// Intermediate values recorded by [`Network::forward_tape`].
#[derive(Clone, Debug)]
pub struct Tape<F: Real> {
    /// Input of every layer; `inputs[0]` is the network input.
    inputs: Vec<Array2<F>>,
    pub output: Array2<F>,
}

fn num_params_for(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl<F: Real> Network<F> {
    /// PyTorch-style uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], activation: Activation, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(sizes, activation)?;
        let mut offset = 0;
        for w in sizes.windows(2) {
            let bound = 1.0 / (w[0] as f64).sqrt();
            for p in &mut net.params[offset..offset + w[0] * w[1] + w[1]] {
                *p = F::c(rng.random_range(-bound..bound));
            }
            offset += w[0] * w[1] + w[1];
        }
        Ok(net)
    }

    pub fn zeros(sizes: &[usize], activation: Activation) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Shape(format!("invalid layer sizes {sizes:?}")));
        }
        Ok(Network {
            sizes: sizes.to_vec(),
            activations: vec![activation; sizes.len() - 2],
            params: vec![F::zero(); num_params_for(sizes)],
        })
    }

    /// Builds a network from explicit `(weight[in][out], bias[out])` layers.
    pub fn from_layers(layers: Vec<(Array2<F>, Vec<F>)>, activations: Vec<Activation>) -> Result<Self> {
        if layers.is_empty() || activations.len() + 1 != layers.len() {
            return Err(Error::Shape(format!(
                "{} layers need {} hidden activations, got {}",
                layers.len(),
                layers.len().saturating_sub(1),
                activations.len()
            )));
        }
        let mut sizes = vec![layers[0].0.nrows()];
        let mut params = Vec::new();
        for (w, b) in &layers {
            if w.nrows() != *sizes.last().unwrap() || w.ncols() != b.len() {
                return Err(Error::Shape(format!(
                    "layer {}x{} with {} biases does not compose with width {}",
                    w.nrows(),
                    w.ncols(),
                    b.len(),
                    sizes.last().unwrap()
                )));
            }
            sizes.push(w.ncols());
            params.extend(w.iter().copied());
            params.extend(b.iter().copied());
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("network parameters".into()));
        }
        Ok(Network {
            sizes,
            activations,
            params,
        })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[F] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [F] {
        &mut self.params
    }

    fn offset(&self, layer: usize) -> usize {
        num_params_for(&self.sizes[..=layer])
    }

    pub fn layer(&self, layer: usize) -> (ArrayView2<'_, F>, ArrayView1<'_, F>) {
        let (i, o) = (self.sizes[layer], self.sizes[layer + 1]);
        let off = self.offset(layer);
        let w = ArrayView2::from_shape((i, o), &self.params[off..off + i * o]).unwrap();
        let b = ArrayView1::from(&self.params[off + i * o..off + i * o + o]);
        (w, b)
    }

    /// Converts to another float precision (used by gradient checks).
    pub fn cast<G: Real>(&self) -> Network<G> {
        Network {
            sizes: self.sizes.clone(),
            activations: self.activations.clone(),
            params: self.params.iter().map(|p| G::c(p.f64())).collect(),
        }
    }

    fn check_input(&self, cols: usize) -> Result<()> {
        if cols != self.input_dim() {
            return Err(Error::Shape(format!(
                "network expects input width {}, got {}",
                self.input_dim(),
                cols
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: ArrayView2<'_, F>) -> Result<Array2<F>> {
        self.check_input(x.ncols())?;
        let mut h = x.to_owned();
        for l in 0..self.num_layers() {
            h = self.affine(l, h.view());
            if let Some(&act) = self.activations.get(l) {
                h.mapv_inplace(|v| act.apply(v));
            }
        }
        Ok(h)
    }

    pub fn forward_one(&self, x: &[F]) -> Result<Vec<F>> {
        let view = ArrayView2::from_shape((1, x.len()), x).unwrap();
        Ok(self.forward(view)?.into_raw_vec_and_offset().0)
    }

    fn affine(&self, l: usize, x: ArrayView2<'_, F>) -> Array2<F> {
        let (w, b) = self.layer(l);
        let mut z = x.dot(&w);
        z += &b;
        z
    }

    pub fn forward_tape(&self, x: ArrayView2<'_, F>) -> Result<Tape<F>> {
        self.check_input(x.ncols())?;
        let mut inputs = Vec::with_capacity(self.num_layers());
        let mut h = x.to_owned();
        for l in 0..self.num_layers() {
            let mut z = self.affine(l, h.view());
            if let Some(&act) = self.activations.get(l) {
                z.mapv_inplace(|v| act.apply(v));
            }
            inputs.push(h);
            h = z;
        }
        Ok(Tape { inputs, output: h })
    }

    /// Reverse-mode pass. Accumulates `d(sum upstream * output)/d(params)`
    /// into `grads` and returns the gradient with respect to the input.
    pub fn backward(&self, tape: &Tape<F>, upstream: ArrayView2<'_, F>, grads: &mut [F]) -> Result<Array2<F>> {
        if upstream.dim() != tape.output.dim() {
            return Err(Error::Shape(format!(
                "upstream gradient {:?} does not match output {:?}",
                upstream.dim(),
                tape.output.dim()
            )));
        }
        if grads.len() != self.params.len() {
            return Err(Error::Shape(format!(
                "gradient buffer has {} entries, network has {}",
                grads.len(),
                self.params.len()
            )));
        }
        let mut delta = upstream.to_owned();
        for l in (0..self.num_layers()).rev() {
            let (w, _) = self.layer(l);
            let input = &tape.inputs[l];
            let (i, o) = (self.sizes[l], self.sizes[l + 1]);
            let off = self.offset(l);
            let gw = input.t().dot(&delta);
            for (g, v) in grads[off..off + i * o].iter_mut().zip(gw.iter()) {
                *g += *v;
            }
            let gb = delta.sum_axis(Axis(0));
            for (g, v) in grads[off + i * o..off + i * o + o].iter_mut().zip(gb.iter()) {
                *g += *v;
            }
            let mut prev = delta.dot(&w.t());
            if l > 0 {
                let act = self.activations[l - 1];
                ndarray::Zip::from(&mut prev)
                    .and(input)
                    .for_each(|d, &y| *d *= act.derivative_from_output(y));
            }
            delta = prev;
        }
        Ok(delta)
    }

    /// target <- (1 - tau) * target + tau * online.
    pub fn polyak_from(&mut self, online: &Network<F>, tau: F) -> Result<()> {
        if self.sizes != online.sizes {
            return Err(Error::Shape(format!(
                "polyak update between {:?} and {:?}",
                self.sizes, online.sizes
            )));
        }
        if !(tau > F::zero() && tau <= F::one()) {
            return Err(Error::InvalidArgument(format!("polyak tau must be in (0,1], got {tau}")));
        }
        let keep = F::one() - tau;
        for (t, &o) in self.params.iter_mut().zip(&online.params) {
            *t = keep * *t + tau * o;
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct LayerJson {
    weight: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

/// Portable checkpoint form: nested row-major arrays, `weight[i][j]` maps
/// input `i` to output `j`.
#[derive(Serialize, Deserialize)]
pub(crate) struct NetworkJson {
    activations: Vec<Activation>,
    layers: Vec<LayerJson>,
}

impl<F: Real> Serialize for Network<F> {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let layers = (0..self.num_layers())
            .map(|l| {
                let (w, b) = self.layer(l);
                LayerJson {
                    weight: w.rows().into_iter().map(|r| r.iter().map(|v| v.f64()).collect()).collect(),
                    bias: b.iter().map(|v| v.f64()).collect(),
                }
            })
            .collect();
        NetworkJson {
            activations: self.activations.clone(),
            layers,
        }
        .serialize(serializer)
    }
}

impl<'de, F: Real> Deserialize<'de> for Network<F> {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let json = NetworkJson::deserialize(deserializer)?;
        let mut layers = Vec::with_capacity(json.layers.len());
        for layer in json.layers {
            let rows = layer.weight.len();
            let cols = layer.weight.first().map_or(0, Vec::len);
            if layer.weight.iter().any(|r| r.len() != cols) {
                return Err(serde::de::Error::custom("ragged weight matrix"));
            }
            let flat: Vec<F> = layer.weight.into_iter().flatten().map(F::c).collect();
            let w = Array2::from_shape_vec((rows, cols), flat).map_err(serde::de::Error::custom)?;
            layers.push((w, layer.bias.into_iter().map(F::c).collect()));
        }
        Network::from_layers(layers, json.activations).map_err(serde::de::Error::custom)
    }
}
