//! Conditional discriminator: scores a (condition, candidate) pair of networks
//! stacked as two edge channels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{
    e2e_backward, e2e_forward, e2n_backward, e2n_forward, sigmoid, Activation, EdgeFeatureMap, LayerKind,
    LayerParams, NodeFeatureMap,
};
use crate::numerics::{dot, DenseTensor, Prng};

pub const LAYER_NAMES: [&str; 3] = ["e2e1", "e2e2", "e2n"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorConfig {
    pub n: usize,
    pub channels: (usize, usize),
    pub node_dim: usize,
    pub hidden_activation: Activation,
}

impl DiscriminatorConfig {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            channels: (8, 16),
            node_dim: 32,
            hidden_activation: Activation::Relu,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::Config(format!("discriminator needs n >= 2, got {}", self.n)));
        }
        if self.channels.0 == 0 || self.channels.1 == 0 || self.node_dim == 0 {
            return Err(Error::Config("discriminator channel counts must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorModel {
    pub config: DiscriminatorConfig,
    pub layers: Vec<LayerParams>,
    /// Dense readout over the flattened `n × node_dim` node embedding.
    pub dense_weights: DenseTensor,
    pub dense_bias: DenseTensor,
}

#[derive(Debug, Clone)]
struct Activations {
    input: EdgeFeatureMap,
    z1: EdgeFeatureMap,
    a1: EdgeFeatureMap,
    z2: EdgeFeatureMap,
    a2: EdgeFeatureMap,
    zh: NodeFeatureMap,
    h: NodeFeatureMap,
    logit: f64,
}

#[derive(Debug, Clone, Default)]
pub struct DiscriminatorCache {
    inner: Option<Box<Activations>>,
}

impl DiscriminatorCache {
    pub fn is_empty(&self) -> bool {
        self.inner.is_none()
    }
}

#[derive(Debug, Clone)]
pub struct DiscriminatorGrads {
    pub layers: Vec<LayerParams>,
    pub dense_weights: DenseTensor,
    pub dense_bias: DenseTensor,
    pub condition: DenseTensor,
    pub candidate: DenseTensor,
}

impl DiscriminatorGrads {
    pub fn tensors(&self) -> Vec<&DenseTensor> {
        let mut out: Vec<&DenseTensor> = self.layers.iter().flat_map(|l| l.tensors()).collect();
        out.push(&self.dense_weights);
        out.push(&self.dense_bias);
        out
    }
}

impl DiscriminatorModel {
    pub fn new(config: DiscriminatorConfig, rng: &Prng) -> Result<Self> {
        config.validate()?;
        let n = config.n;
        let (c1, c2) = config.channels;
        let specs = [
            (LayerKind::E2eConv, 2, c1),
            (LayerKind::E2eConv, c1, c2),
            (LayerKind::E2nConv, c2, config.node_dim),
        ];
        let layers = specs
            .iter()
            .zip(LAYER_NAMES)
            .map(|(&(kind, c_in, c_out), name)| {
                let mut r = rng.split(&format!("discriminator.{name}"));
                LayerParams::init(kind, n, c_in, c_out, &mut r)
            })
            .collect();
        let flat = n * config.node_dim;
        let s = (6.0 / (flat + 1) as f64).sqrt();
        let mut r = rng.split("discriminator.dense");
        let dense = (0..flat).map(|_| r.uniform_in(-s, s)).collect();
        Ok(Self {
            dense_weights: DenseTensor::from_vec(&[flat], dense)?,
            dense_bias: DenseTensor::zeros(&[1]),
            config,
            layers,
        })
    }

    pub fn named_tensors(&self) -> Vec<(String, &DenseTensor)> {
        let mut out: Vec<(String, &DenseTensor)> = self
            .layers
            .iter()
            .zip(LAYER_NAMES)
            .flat_map(|(l, name)| {
                l.named_tensors()
                    .map(move |(t, v)| (format!("discriminator.{name}.{t}"), v))
            })
            .collect();
        out.push(("discriminator.dense.weights".into(), &self.dense_weights));
        out.push(("discriminator.dense.bias".into(), &self.dense_bias));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut DenseTensor> {
        let mut out: Vec<&mut DenseTensor> = self.layers.iter_mut().flat_map(|l| l.tensors_mut().iter_mut()).collect();
        out.push(&mut self.dense_weights);
        out.push(&mut self.dense_bias);
        out
    }

    /// Probability that `candidate` is a real target given `condition`.
    pub fn discriminate(&self, condition: &DenseTensor, candidate: &DenseTensor) -> Result<f64> {
        let mut cache = DiscriminatorCache::default();
        self.forward(condition, candidate, &mut cache)
    }

    pub fn forward(
        &self,
        condition: &DenseTensor,
        candidate: &DenseTensor,
        cache: &mut DiscriminatorCache,
    ) -> Result<f64> {
        let n = self.config.n;
        for m in [condition, candidate] {
            if m.shape() != [n, n] {
                return Err(Error::shape(format!(
                    "discriminator built for {n}x{n}, got {:?}",
                    m.shape()
                )));
            }
        }
        let act = self.config.hidden_activation;
        let input = EdgeFeatureMap::from_matrices(&[condition, candidate])?;
        let z1 = e2e_forward(&input, &self.layers[0])?;
        let a1 = act.forward_edges(&z1);
        let z2 = e2e_forward(&a1, &self.layers[1])?;
        let a2 = act.forward_edges(&z2);
        let zh = e2n_forward(&a2, &self.layers[2])?;
        let h = act.forward_nodes(&zh);
        let logit = dot(self.dense_weights.data(), h.values()) + self.dense_bias.data()[0];
        if !logit.is_finite() {
            return Err(Error::Domain("discriminator logit is not finite".into()));
        }
        cache.inner = Some(Box::new(Activations {
            input,
            z1,
            a1,
            z2,
            a2,
            zh,
            h,
            logit,
        }));
        Ok(sigmoid(logit))
    }

    /// Gradients given `d_prob = ∂L/∂D`.
    pub fn backward(&self, cache: &DiscriminatorCache, d_prob: f64) -> Result<DiscriminatorGrads> {
        let acts = cache.inner.as_deref().ok_or(Error::MissingCache)?;
        let act = self.config.hidden_activation;
        let p = sigmoid(acts.logit);
        let d_logit = d_prob * p * (1.0 - p);

        let d_dense = acts.h.map(|v| v * d_logit);
        let d_h_vals: Vec<f64> = self.dense_weights.data().iter().map(|w| w * d_logit).collect();
        let d_h = NodeFeatureMap::from_values(acts.h.n(), acts.h.channels(), d_h_vals)?;
        let dzh = act.backward_nodes(&acts.zh, &d_h);
        let (d_a2, g2) = e2n_backward(&acts.a2, &self.layers[2], &dzh)?;
        let dz2 = act.backward_edges(&acts.z2, &d_a2);
        let (d_a1, g1) = e2e_backward(&acts.a1, &self.layers[1], &dz2)?;
        let dz1 = act.backward_edges(&acts.z1, &d_a1);
        let (d_input, g0) = e2e_backward(&acts.input, &self.layers[0], &dz1)?;

        Ok(DiscriminatorGrads {
            layers: vec![g0, g1, g2],
            dense_weights: DenseTensor::from_vec(&[d_dense.values().len()], d_dense.values().to_vec())?,
            dense_bias: DenseTensor::from_vec(&[1], vec![d_logit])?,
            condition: d_input.channel_matrix(0),
            candidate: d_input.channel_matrix(1),
        })
    }
}
