use std::ops::Range;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
}

/// Output head. `Sigmoid` yields probabilities; `ExpOffset` yields a
/// positive rate per unit exposure, the count mean being `exposure * rate`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    Sigmoid,
    ExpOffset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub hidden_layers: usize,
    pub width: usize,
    pub activation: Activation,
    pub head: Head,
    pub dropout: f64,
}

impl NetworkSpec {
    pub fn new(input_dim: usize, hidden_layers: usize, width: usize, head: Head) -> Self {
        Self {
            input_dim,
            hidden_layers,
            width,
            activation: Activation::Relu,
            head,
            dropout: 0.0,
        }
    }

    pub fn with_dropout(mut self, rate: f64) -> Self {
        self.dropout = rate;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim < 1 {
            return Err(Error::Config("input dimension must be at least 1".into()));
        }
        if self.hidden_layers < 1 || self.width < 1 {
            return Err(Error::Config(
                "need at least one hidden layer of width at least 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        Ok(())
    }

    /// `(fan_out, fan_in)` of every layer, output layer last.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = vec![(self.width, self.input_dim)];
        for _ in 1..self.hidden_layers {
            shapes.push((self.width, self.width));
        }
        shapes.push((1, self.width));
        shapes
    }

    pub fn param_count(&self) -> usize {
        self.layer_shapes().iter().map(|(o, i)| o * i + o).sum()
    }

    /// Index ranges of each weight matrix and bias vector inside the flat
    /// parameter vector, in storage order.
    pub fn param_blocks(&self) -> Vec<Range<usize>> {
        let mut blocks = Vec::new();
        let mut at = 0;
        for (o, i) in self.layer_shapes() {
            blocks.push(at..at + o * i);
            at += o * i;
            blocks.push(at..at + o);
            at += o;
        }
        blocks
    }
}

/// Dropout masks for one batch, one `n x width` matrix per hidden layer,
/// holding 0 or `1 / (1 - rate)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMasks(pub Vec<Array2<f64>>);

impl DropoutMasks {
    pub fn sample(spec: &NetworkSpec, n: usize, rng: &mut ChaCha8Rng) -> Option<Self> {
        if spec.dropout == 0.0 {
            return None;
        }
        let keep = 1.0 - spec.dropout;
        let masks = (0..spec.hidden_layers)
            .map(|_| {
                Array2::from_shape_simple_fn((n, spec.width), || {
                    if rng.gen::<f64>() < keep {
                        1.0 / keep
                    } else {
                        0.0
                    }
                })
            })
            .collect();
        Some(Self(masks))
    }
}

/// Fully connected network with a flat parameter vector. Each layer stores
/// its weight matrix row-major (`fan_out x fan_in`) followed by its bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub spec: NetworkSpec,
    pub theta: Vec<f64>,
}

pub(crate) struct ForwardCache {
    /// Input to every layer; `inputs[0]` is the batch itself.
    inputs: Vec<Array2<f64>>,
    pre_activations: Vec<Array2<f64>>,
    pub(crate) logits: Array1<f64>,
}

impl Network {
    /// Uniform initialisation on `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` for
    /// weights and biases alike.
    pub fn init(spec: NetworkSpec, rng: &mut ChaCha8Rng) -> Result<Self> {
        spec.validate()?;
        let mut theta = Vec::with_capacity(spec.param_count());
        for (o, i) in spec.layer_shapes() {
            let bound = 1.0 / (i as f64).sqrt();
            for _ in 0..(o * i + o) {
                theta.push(rng.gen_range(-bound..=bound));
            }
        }
        Ok(Self { spec, theta })
    }

    pub fn from_parts(spec: NetworkSpec, theta: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        if theta.len() != spec.param_count() {
            return Err(Error::ShapeMismatch(format!(
                "{} parameters for a network that needs {}",
                theta.len(),
                spec.param_count()
            )));
        }
        Ok(Self { spec, theta })
    }

    fn layer(&self, index: usize) -> (ArrayView2<'_, f64>, ArrayView1<'_, f64>) {
        let blocks = self.spec.param_blocks();
        let (o, i) = self.spec.layer_shapes()[index];
        let w = ArrayView2::from_shape((o, i), &self.theta[blocks[2 * index].clone()])
            .expect("block sized from spec");
        let b = ArrayView1::from(&self.theta[blocks[2 * index + 1].clone()]);
        (w, b)
    }

    fn check_exposure(&self, n: usize, exposure: Option<&[f64]>) -> Result<()> {
        match (self.spec.head, exposure) {
            (Head::Sigmoid, None) => Ok(()),
            (Head::Sigmoid, Some(_)) => Err(Error::ShapeMismatch(
                "exposure given to a sigmoid head".into(),
            )),
            (Head::ExpOffset, None) => Err(Error::ShapeMismatch(
                "exponential head needs an exposure vector".into(),
            )),
            (Head::ExpOffset, Some(e)) if e.len() != n => Err(Error::ShapeMismatch(format!(
                "{} exposures for {n} rows",
                e.len()
            ))),
            (Head::ExpOffset, Some(e)) if e.iter().any(|v| !(*v > 0.0)) => {
                Err(Error::ShapeMismatch("exposures must be positive".into()))
            }
            _ => Ok(()),
        }
    }

    pub(crate) fn forward_cached(
        &self,
        x: &Array2<f64>,
        masks: Option<&DropoutMasks>,
    ) -> Result<ForwardCache> {
        if x.ncols() != self.spec.input_dim {
            return Err(Error::ShapeMismatch(format!(
                "input has {} columns, network expects {}",
                x.ncols(),
                self.spec.input_dim
            )));
        }
        let k = self.spec.hidden_layers;
        let mut inputs = Vec::with_capacity(k + 1);
        let mut pre_activations = Vec::with_capacity(k);
        inputs.push(x.to_owned());
        for l in 0..k {
            let (w, b) = self.layer(l);
            let a = inputs[l].dot(&w.t()) + b;
            let mut z = a.mapv(|v| v.max(0.0));
            if let Some(m) = masks {
                z *= &m.0[l];
            }
            pre_activations.push(a);
            inputs.push(z);
        }
        let (w, b) = self.layer(k);
        let logits = inputs[k].dot(&w.row(0)) + b[0];
        Ok(ForwardCache {
            inputs,
            pre_activations,
            logits,
        })
    }

    pub(crate) fn head_output(&self, logits: &Array1<f64>) -> Vec<f64> {
        match self.spec.head {
            Head::Sigmoid => logits.iter().map(|&o| sigmoid(o)).collect(),
            Head::ExpOffset => logits.iter().map(|&o| o.exp()).collect(),
        }
    }

    /// Predictions without dropout: probabilities for a sigmoid head, rates
    /// per unit exposure for an exponential head.
    pub fn forward(&self, x: &Array2<f64>, exposure: Option<&[f64]>) -> Result<Vec<f64>> {
        self.check_exposure(x.nrows(), exposure)?;
        let cache = self.forward_cached(x, None)?;
        Ok(self.head_output(&cache.logits))
    }

    /// Predicted count means `exposure * rate` of an exponential head.
    pub fn predicted_counts(&self, x: &Array2<f64>, exposure: &[f64]) -> Result<Vec<f64>> {
        let rates = self.forward(x, Some(exposure))?;
        Ok(rates.iter().zip(exposure).map(|(r, e)| r * e).collect())
    }

    /// Gradient over the flat parameters given the derivative of the loss
    /// with respect to every logit. Rectifier kinks take subgradient 0.
    pub(crate) fn backprop(
        &self,
        cache: &ForwardCache,
        d_logits: &Array1<f64>,
        masks: Option<&DropoutMasks>,
    ) -> Vec<f64> {
        let k = self.spec.hidden_layers;
        let blocks = self.spec.param_blocks();
        let mut grad = vec![0.0; self.theta.len()];

        let (w_out, _) = self.layer(k);
        let gw = cache.inputs[k].t().dot(d_logits);
        grad[blocks[2 * k].clone()].copy_from_slice(gw.as_slice().expect("contiguous"));
        grad[blocks[2 * k + 1].start] = d_logits.sum();

        let mut dz = d_logits
            .view()
            .insert_axis(Axis(1))
            .dot(&w_out.row(0).insert_axis(Axis(0)));
        for l in (0..k).rev() {
            let mut da = dz;
            da.zip_mut_with(&cache.pre_activations[l], |g, &a| {
                if a <= 0.0 {
                    *g = 0.0;
                }
            });
            if let Some(m) = masks {
                da *= &m.0[l];
            }
            let gw = da.t().dot(&cache.inputs[l]);
            grad[blocks[2 * l].clone()]
                .iter_mut()
                .zip(gw.iter())
                .for_each(|(g, v)| *g = *v);
            let gb = da.sum_axis(Axis(0));
            grad[blocks[2 * l + 1].clone()].copy_from_slice(gb.as_slice().expect("contiguous"));
            if l > 0 {
                let (w, _) = self.layer(l);
                dz = da.dot(&w);
            } else {
                break;
            }
        }
        grad
    }
}

pub(crate) fn sigmoid(o: f64) -> f64 {
    if o >= 0.0 {
        1.0 / (1.0 + (-o).exp())
    } else {
        let e = o.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn spec(head: Head) -> NetworkSpec {
        NetworkSpec::new(3, 2, 4, head)
    }

    #[test]
    fn parameter_layout() {
        let s = spec(Head::Sigmoid);
        assert_eq!(s.param_count(), (4 * 3 + 4) + (4 * 4 + 4) + (4 + 1));
        let blocks = s.param_blocks();
        assert_eq!(blocks.len(), 6);
        assert_eq!(blocks.last().unwrap().end, s.param_count());
    }

    #[test]
    fn zero_weights_give_trivial_outputs() {
        let x = Array2::from_elem((5, 3), 0.7);
        let s = spec(Head::Sigmoid);
        let net = Network::from_parts(s.clone(), vec![0.0; s.param_count()]).unwrap();
        assert!(net.forward(&x, None).unwrap().iter().all(|&p| p == 0.5));
        let s = spec(Head::ExpOffset);
        let net = Network::from_parts(s.clone(), vec![0.0; s.param_count()]).unwrap();
        let e = [1.0, 2.0, 0.5, 1.0, 3.0];
        assert!(net.forward(&x, Some(&e)).unwrap().iter().all(|&r| r == 1.0));
    }

    #[test]
    fn matches_hand_rolled_arithmetic() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = Network::init(spec(Head::Sigmoid), &mut rng).unwrap();
        let x = Array2::from_shape_fn((6, 3), |(i, j)| (i as f64 - 2.0) * 0.3 + j as f64 * 0.1);
        let got = net.forward(&x, None).unwrap();
        let t = &net.theta;
        for (r, &g) in got.iter().enumerate() {
            let mut h: Vec<f64> = (0..3).map(|j| x[[r, j]]).collect();
            let mut at = 0;
            for (o, i) in net.spec.layer_shapes() {
                let mut out = vec![0.0; o];
                for (u, slot) in out.iter_mut().enumerate() {
                    let mut s = t[at + o * i + u];
                    for v in 0..i {
                        s += t[at + u * i + v] * h[v];
                    }
                    *slot = s;
                }
                at += o * i + o;
                h = if o == 1 {
                    out
                } else {
                    out.iter().map(|v| v.max(0.0)).collect()
                };
            }
            let want = 1.0 / (1.0 + (-h[0]).exp());
            assert!((g - want).abs() < 1e-12);
        }
    }

    #[test]
    fn exposure_contract() {
        let x = Array2::from_elem((2, 3), 0.1);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Network::init(spec(Head::ExpOffset), &mut rng).unwrap();
        assert!(net.forward(&x, None).is_err());
        let r1 = net.forward(&x, Some(&[1.0, 1.0])).unwrap();
        let r2 = net.forward(&x, Some(&[2.0, 2.0])).unwrap();
        assert_eq!(r1, r2);
        let c1 = net.predicted_counts(&x, &[1.0, 1.0]).unwrap();
        let c2 = net.predicted_counts(&x, &[2.0, 2.0]).unwrap();
        assert_eq!(c2[0], 2.0 * c1[0]);
        let bad = Array2::from_elem((2, 4), 0.1);
        assert!(matches!(
            net.forward(&bad, Some(&[1.0, 1.0])),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn spec_validation() {
        assert!(NetworkSpec::new(2, 0, 4, Head::Sigmoid).validate().is_err());
        assert!(NetworkSpec::new(2, 1, 4, Head::Sigmoid)
            .with_dropout(1.0)
            .validate()
            .is_err());
    }
}
