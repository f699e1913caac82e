//! Source-to-target network translator: a three-layer graph encoder, a noise
//! injected bottleneck, and a three-layer decoder with U-Net style skips.
//!
//! ```text
//! S ─E2E₁─relu─► A₁ ─E2E₂─relu─► A₂ ─E2N─relu─► H ─[H|U]─N2E─relu─► D₃
//!                │               └──────────────────────────────┐  │
//!                │                                  [D₃|A₂]─E2E'₁─relu─► D₄
//!                └─────────────────────────────────────────────┐  │
//!                                                   [D₄|A₁]─E2E'₂─sigmoid─► Y
//! ```
//!
//! The prediction is `(Y + Yᵀ)/2` with a zeroed diagonal.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{
    e2e_backward, e2e_deconv_backward, e2e_deconv_forward, e2e_forward, e2n_backward, e2n_forward,
    n2e_backward, n2e_forward, Activation, EdgeFeatureMap, LayerKind, LayerParams, NodeFeatureMap,
};
use crate::multiplex::BrainNetwork;
use crate::numerics::{DenseTensor, Prng};

pub const LAYER_NAMES: [&str; 6] = ["e2e1", "e2e2", "e2n", "n2e", "deconv1", "deconv2"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranslatorConfig {
    pub n: usize,
    pub enc_channels: (usize, usize),
    pub node_dim: usize,
    /// Width of the Gaussian node noise concatenated at the bottleneck; 0 disables it.
    pub noise_dim: usize,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
    pub symmetrize_output: bool,
}

impl TranslatorConfig {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            enc_channels: (8, 16),
            node_dim: 32,
            noise_dim: 8,
            hidden_activation: Activation::Relu,
            output_activation: Activation::Sigmoid,
            symmetrize_output: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::Config(format!("translator needs n >= 2, got {}", self.n)));
        }
        if self.enc_channels.0 == 0 || self.enc_channels.1 == 0 || self.node_dim == 0 {
            return Err(Error::Config("translator channel counts must be positive".into()));
        }
        Ok(())
    }

    fn layer_specs(&self) -> [(LayerKind, usize, usize); 6] {
        let (c1, c2) = self.enc_channels;
        [
            (LayerKind::E2eConv, 1, c1),
            (LayerKind::E2eConv, c1, c2),
            (LayerKind::E2nConv, c2, self.node_dim),
            (LayerKind::N2eDeconv, self.node_dim + self.noise_dim, c2),
            (LayerKind::E2eDeconv, 2 * c2, c1),
            (LayerKind::E2eDeconv, 2 * c1, 1),
        ]
    }
}

/// Where the bottleneck noise comes from.
pub enum Noise<'a> {
    Given(&'a NodeFeatureMap),
    Sample(&'a mut Prng),
    Zero,
}

/// Which learned inter-layer to extract alongside the prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tap {
    None,
    PreRelu,
    PostRelu,
}

#[derive(Debug, Clone)]
pub struct Translation {
    pub predicted: BrainNetwork,
    pub tap: Option<DenseTensor>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TranslatorModel {
    pub config: TranslatorConfig,
    pub layers: Vec<LayerParams>,
}

#[derive(Debug, Clone)]
struct Activations {
    source: EdgeFeatureMap,
    z1: EdgeFeatureMap,
    a1: EdgeFeatureMap,
    z2: EdgeFeatureMap,
    a2: EdgeFeatureMap,
    zh: NodeFeatureMap,
    bottleneck: NodeFeatureMap,
    z3: EdgeFeatureMap,
    dec1_in: EdgeFeatureMap,
    z4: EdgeFeatureMap,
    dec2_in: EdgeFeatureMap,
    z5: EdgeFeatureMap,
}

/// Forward state recorded for [`TranslatorModel::backward`]. Empty until a
/// forward pass fills it.
#[derive(Debug, Clone, Default)]
pub struct TranslatorCache {
    inner: Option<Box<Activations>>,
}

impl TranslatorCache {
    pub fn is_empty(&self) -> bool {
        self.inner.is_none()
    }
}

#[derive(Debug, Clone)]
pub struct TranslatorGrads {
    pub layers: Vec<LayerParams>,
    pub source: DenseTensor,
    pub noise: NodeFeatureMap,
}

impl TranslatorGrads {
    /// Parameter gradients in registry order.
    pub fn tensors(&self) -> Vec<&DenseTensor> {
        self.layers.iter().flat_map(|l| l.tensors()).collect()
    }
}

fn symmetrize(m: &DenseTensor) -> DenseTensor {
    let n = m.rows();
    let mut out = m.clone();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

impl TranslatorModel {
    pub fn new(config: TranslatorConfig, rng: &Prng) -> Result<Self> {
        config.validate()?;
        let layers = config
            .layer_specs()
            .iter()
            .zip(LAYER_NAMES)
            .map(|(&(kind, c_in, c_out), name)| {
                let mut r = rng.split(&format!("translator.{name}"));
                LayerParams::init(kind, config.n, c_in, c_out, &mut r)
            })
            .collect();
        Ok(Self { config, layers })
    }

    /// Registry name → tensor, in stable order.
    pub fn named_tensors(&self) -> Vec<(String, &DenseTensor)> {
        self.layers
            .iter()
            .zip(LAYER_NAMES)
            .flat_map(|(l, name)| l.named_tensors().map(move |(t, v)| (format!("translator.{name}.{t}"), v)))
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut DenseTensor> {
        self.layers.iter_mut().flat_map(|l| l.tensors_mut().iter_mut()).collect()
    }

    pub fn zero_grads(&self) -> TranslatorGrads {
        let n = self.config.n;
        TranslatorGrads {
            layers: self.layers.iter().map(LayerParams::zeros_like).collect(),
            source: DenseTensor::zeros(&[n, n]),
            noise: NodeFeatureMap::zeros(n, self.config.noise_dim),
        }
    }

    fn check_source(&self, source: &BrainNetwork) -> Result<()> {
        if source.n() != self.config.n {
            return Err(Error::shape(format!(
                "translator built for n={}, source has n={}",
                self.config.n,
                source.n()
            )));
        }
        source.validate()
    }

    fn resolve_noise(&self, noise: Noise<'_>) -> Result<NodeFeatureMap> {
        let (n, d) = (self.config.n, self.config.noise_dim);
        match noise {
            Noise::Given(u) => {
                if u.n() != n || u.channels() != d {
                    return Err(Error::shape(format!(
                        "noise must be {n}x{d}, got {}x{}",
                        u.n(),
                        u.channels()
                    )));
                }
                Ok(u.clone())
            }
            Noise::Sample(rng) => Ok(NodeFeatureMap::gaussian(n, d, rng)),
            Noise::Zero => Ok(NodeFeatureMap::zeros(n, d)),
        }
    }

    /// Predicts the target network; optionally extracts the learned inter-layer.
    pub fn translate(&self, source: &BrainNetwork, noise: Noise<'_>, tap: Tap) -> Result<Translation> {
        let mut cache = TranslatorCache::default();
        let predicted = self.forward(source, noise, &mut cache)?;
        let acts = cache.inner.as_ref().expect("forward fills the cache");
        let tap = match tap {
            Tap::None => None,
            Tap::PreRelu => Some(symmetrize(&acts.z2.channel_mean())),
            Tap::PostRelu => Some(symmetrize(&acts.a2.channel_mean())),
        };
        Ok(Translation { predicted, tap })
    }

    /// Forward pass recording everything [`TranslatorModel::backward`] needs.
    pub fn forward(
        &self,
        source: &BrainNetwork,
        noise: Noise<'_>,
        cache: &mut TranslatorCache,
    ) -> Result<BrainNetwork> {
        self.check_source(source)?;
        let noise = self.resolve_noise(noise)?;
        let hidden = self.config.hidden_activation;
        let l = &self.layers;

        let x = EdgeFeatureMap::from_matrices(&[source.weights()])?;
        let z1 = e2e_forward(&x, &l[0])?;
        let a1 = hidden.forward_edges(&z1);
        let z2 = e2e_forward(&a1, &l[1])?;
        let a2 = hidden.forward_edges(&z2);
        let zh = e2n_forward(&a2, &l[2])?;
        let bottleneck = hidden.forward_nodes(&zh).concat(&noise)?;
        let z3 = n2e_forward(&bottleneck, &l[3])?;
        let dec1_in = hidden.forward_edges(&z3).concat(&a2)?;
        let z4 = e2e_deconv_forward(&dec1_in, &l[4])?;
        let dec2_in = hidden.forward_edges(&z4).concat(&a1)?;
        let z5 = e2e_deconv_forward(&dec2_in, &l[5])?;
        let y = self.config.output_activation.forward_edges(&z5).channel_matrix(0);

        let mut out = if self.config.symmetrize_output { symmetrize(&y) } else { y };
        for i in 0..self.config.n {
            out[(i, i)] = 0.0;
        }
        if !out.is_finite() {
            return Err(Error::Domain("translator produced non-finite values".into()));
        }

        cache.inner = Some(Box::new(Activations {
            source: x,
            z1,
            a1,
            z2,
            a2,
            zh,
            bottleneck,
            z3,
            dec1_in,
            z4,
            dec2_in,
            z5,
        }));
        let label = source.view_label().to_string();
        if self.config.symmetrize_output {
            BrainNetwork::new(out, label)
        } else {
            Ok(BrainNetwork::from_parts_unchecked(out, label))
        }
    }

    /// Gradients of a scalar loss given `d_predicted = ∂L/∂(prediction entries)`.
    pub fn backward(&self, cache: &TranslatorCache, d_predicted: &DenseTensor) -> Result<TranslatorGrads> {
        let acts = cache.inner.as_deref().ok_or(Error::MissingCache)?;
        let n = self.config.n;
        if d_predicted.shape() != [n, n] {
            return Err(Error::shape(format!("upstream gradient must be {n}x{n}")));
        }
        let hidden = self.config.hidden_activation;
        let l = &self.layers;

        let mut dy = DenseTensor::zeros(&[n, n]);
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                dy[(i, j)] = if self.config.symmetrize_output {
                    0.5 * (d_predicted[(i, j)] + d_predicted[(j, i)])
                } else {
                    d_predicted[(i, j)]
                };
            }
        }
        let dy = EdgeFeatureMap::from_matrices(&[&dy])?;
        let dz5 = self.config.output_activation.backward_edges(&acts.z5, &dy);
        let (d_dec2_in, g5) = e2e_deconv_backward(&acts.dec2_in, &l[5], &dz5)?;
        let (d_a4, d_a1_skip) = d_dec2_in.split(self.config.enc_channels.0);
        let dz4 = hidden.backward_edges(&acts.z4, &d_a4);
        let (d_dec1_in, g4) = e2e_deconv_backward(&acts.dec1_in, &l[4], &dz4)?;
        let (d_a3, d_a2_skip) = d_dec1_in.split(self.config.enc_channels.1);
        let dz3 = hidden.backward_edges(&acts.z3, &d_a3);
        let (d_bottleneck, g3) = n2e_backward(&acts.bottleneck, &l[3], &dz3)?;
        let (d_h, d_noise) = d_bottleneck.split(self.config.node_dim);
        let dzh = hidden.backward_nodes(&acts.zh, &d_h);
        let (mut d_a2, g2) = e2n_backward(&acts.a2, &l[2], &dzh)?;
        for (acc, v) in d_a2.values_mut().iter_mut().zip(d_a2_skip.values()) {
            *acc += v;
        }
        let dz2 = hidden.backward_edges(&acts.z2, &d_a2);
        let (mut d_a1, g1) = e2e_backward(&acts.a1, &l[1], &dz2)?;
        for (acc, v) in d_a1.values_mut().iter_mut().zip(d_a1_skip.values()) {
            *acc += v;
        }
        let dz1 = hidden.backward_edges(&acts.z1, &d_a1);
        let (d_x, g0) = e2e_backward(&acts.source, &l[0], &dz1)?;

        Ok(TranslatorGrads {
            layers: vec![g0, g1, g2, g3, g4, g5],
            source: d_x.channel_matrix(0),
            noise: d_noise,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{dot, grad_check};

    fn random_source(rng: &mut Prng, n: usize) -> BrainNetwork {
        let mut m = DenseTensor::zeros(&[n, n]);
        for i in 0..n {
            for j in 0..i {
                let v = rng.uniform();
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        BrainNetwork::new(m, "source").unwrap()
    }

    fn small_config(n: usize) -> TranslatorConfig {
        TranslatorConfig {
            enc_channels: (3, 2),
            node_dim: 3,
            noise_dim: 2,
            ..TranslatorConfig::new(n)
        }
    }

    fn randomize_biases(model: &mut TranslatorModel, rng: &mut Prng) {
        for l in &mut model.layers {
            for v in l.bias_mut().data_mut() {
                *v = rng.uniform_in(-0.3, 0.3);
            }
        }
    }

    #[test]
    fn output_invariants_hold() {
        let model = TranslatorModel::new(TranslatorConfig::new(8), &Prng::new(1)).unwrap();
        let mut rng = Prng::new(2);
        for _ in 0..100 {
            let s = random_source(&mut rng, 8);
            let out = model.translate(&s, Noise::Sample(&mut rng), Tap::None).unwrap();
            let w = out.predicted.weights();
            for i in 0..8 {
                assert_eq!(w[(i, i)], 0.0);
                for j in 0..8 {
                    assert!((w[(i, j)] - w[(j, i)]).abs() <= 1e-12);
                    if i != j {
                        assert!(w[(i, j)] > 0.0 && w[(i, j)] < 1.0);
                    }
                }
            }
        }
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let mut rng = Prng::new(3);
        let s = random_source(&mut rng, 6);
        let run = || {
            let model = TranslatorModel::new(TranslatorConfig::new(6), &Prng::new(4)).unwrap();
            let mut noise_rng = Prng::new(5);
            model.translate(&s, Noise::Sample(&mut noise_rng), Tap::PostRelu).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.predicted, b.predicted);
        assert_eq!(a.tap, b.tap);
    }

    #[test]
    fn zero_noise_dim_is_a_function_of_the_source() {
        let cfg = TranslatorConfig {
            noise_dim: 0,
            ..TranslatorConfig::new(6)
        };
        let model = TranslatorModel::new(cfg, &Prng::new(6)).unwrap();
        let mut rng = Prng::new(7);
        let s = random_source(&mut rng, 6);
        let a = model.translate(&s, Noise::Sample(&mut rng), Tap::None).unwrap();
        let b = model.translate(&s, Noise::Sample(&mut rng), Tap::None).unwrap();
        assert_eq!(a.predicted, b.predicted);
    }

    #[test]
    fn matches_manual_layer_composition() {
        let n = 6;
        let model = TranslatorModel::new(TranslatorConfig::new(n), &Prng::new(8)).unwrap();
        let mut rng = Prng::new(9);
        let s = random_source(&mut rng, n);
        let u = NodeFeatureMap::gaussian(n, 8, &mut rng);
        let got = model.translate(&s, Noise::Given(&u), Tap::PreRelu).unwrap();

        let relu = |m: &EdgeFeatureMap| m.map(|v| v.max(0.0));
        let l = &model.layers;
        let x = EdgeFeatureMap::from_matrices(&[s.weights()]).unwrap();
        let a1 = relu(&e2e_forward(&x, &l[0]).unwrap());
        let z2 = e2e_forward(&a1, &l[1]).unwrap();
        let a2 = relu(&z2);
        let h = e2n_forward(&a2, &l[2]).unwrap().map(|v| v.max(0.0));
        let d3 = relu(&n2e_forward(&h.concat(&u).unwrap(), &l[3]).unwrap());
        let d4 = relu(&e2e_deconv_forward(&d3.concat(&a2).unwrap(), &l[4]).unwrap());
        let y = e2e_deconv_forward(&d4.concat(&a1).unwrap(), &l[5]).unwrap();
        for i in 0..n {
            for j in 0..n {
                let expected = if i == j {
                    0.0
                } else {
                    let s_ij = 1.0 / (1.0 + (-y.get(i, j, 0)).exp());
                    let s_ji = 1.0 / (1.0 + (-y.get(j, i, 0)).exp());
                    0.5 * (s_ij + s_ji)
                };
                assert!((got.predicted.weights()[(i, j)] - expected).abs() < 1e-14);
            }
        }
        let mean = z2.channel_mean();
        let tap = got.tap.unwrap();
        for i in 0..n {
            for j in 0..n {
                assert!((tap[(i, j)] - 0.5 * (mean[(i, j)] + mean[(j, i)])).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn skip_connections_are_wired() {
        let n = 6;
        let mut rng = Prng::new(10);
        for seed in 0..10 {
            let model = TranslatorModel::new(TranslatorConfig::new(n), &Prng::new(seed)).unwrap();
            let s = random_source(&mut rng, n);
            let base = model.translate(&s, Noise::Zero, Tap::None).unwrap().predicted;
            let mut ablated = model.clone();
            // Zero the decoder weights that read the skip channels.
            let (c1, c2) = model.config.enc_channels;
            for (layer, skip_from) in [(4, c2), (5, c1)] {
                let p = &mut ablated.layers[layer];
                let c_in = p.c_in;
                for t in 0..2 {
                    let data = p.tensors_mut()[t].data_mut();
                    for o in 0..data.len() / (c_in * n) {
                        for c in skip_from..c_in {
                            let off = (o * c_in + c) * n;
                            data[off..off + n].iter_mut().for_each(|v| *v = 0.0);
                        }
                    }
                }
            }
            let cut = ablated.translate(&s, Noise::Zero, Tap::None).unwrap().predicted;
            assert!(base.weights().sub(cut.weights()).unwrap().max_abs() > 0.0);
        }
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let model = TranslatorModel::new(small_config(5), &Prng::new(11)).unwrap();
        let mut rng = Prng::new(12);
        let s = random_source(&mut rng, 5);
        let mut cache = TranslatorCache::default();
        model.forward(&s, Noise::Sample(&mut rng), &mut cache).unwrap();
        let g = model.backward(&cache, &DenseTensor::zeros(&[5, 5])).unwrap();
        assert!(g.layers.iter().all(LayerParams::is_zero));
    }

    #[test]
    fn backward_without_forward_fails() {
        let model = TranslatorModel::new(small_config(5), &Prng::new(13)).unwrap();
        let err = model.backward(&TranslatorCache::default(), &DenseTensor::zeros(&[5, 5]));
        assert!(matches!(err, Err(Error::MissingCache)));
    }

    #[test]
    fn rejects_wrong_size_source() {
        let model = TranslatorModel::new(small_config(5), &Prng::new(14)).unwrap();
        let mut rng = Prng::new(15);
        let s = random_source(&mut rng, 6);
        assert!(matches!(
            model.translate(&s, Noise::Zero, Tap::None),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn end_to_end_gradients_match_finite_differences() {
        let n = 6;
        for seed in 0..3 {
            let mut model = TranslatorModel::new(TranslatorConfig::new(n), &Prng::new(seed)).unwrap();
            let mut rng = Prng::new(100 + seed);
            randomize_biases(&mut model, &mut rng);
            let s = random_source(&mut rng, n);
            let u = NodeFeatureMap::gaussian(n, model.config.noise_dim, &mut rng);
            let readout = random_source(&mut rng, n);

            let mut cache = TranslatorCache::default();
            model.forward(&s, Noise::Given(&u), &mut cache).unwrap();
            let grads = model.backward(&cache, readout.weights()).unwrap();

            let analytic: Vec<f64> = grads.layers.iter().flat_map(LayerParams::flatten).collect();
            let point: Vec<f64> = model.layers.iter().flat_map(LayerParams::flatten).collect();
            let loss = |flat: &[f64]| {
                let mut m = model.clone();
                let mut off = 0;
                for l in &mut m.layers {
                    let k = l.num_values();
                    l.set_flat(&flat[off..off + k]);
                    off += k;
                }
                let out = m.translate(&s, Noise::Given(&u), Tap::None).unwrap();
                dot(out.predicted.weights().data(), readout.weights().data())
            };
            let err = grad_check(loss, &analytic, &point);
            assert!(err < 1e-5, "seed {seed}: parameter gradient error {err:e}");

            let noise_err = grad_check(
                |v| {
                    let uu = NodeFeatureMap::from_values(n, u.channels(), v.to_vec()).unwrap();
                    let out = model.translate(&s, Noise::Given(&uu), Tap::None).unwrap();
                    dot(out.predicted.weights().data(), readout.weights().data())
                },
                grads.noise.values(),
                u.values(),
            );
            assert!(noise_err < 1e-5, "seed {seed}: noise gradient error {noise_err:e}");
        }
    }

    #[test]
    fn registry_names_are_unique() {
        let model = TranslatorModel::new(TranslatorConfig::new(5), &Prng::new(16)).unwrap();
        let names: Vec<String> = model.named_tensors().into_iter().map(|(n, _)| n).collect();
        let unique: std::collections::HashSet<_> = names.iter().collect();
        assert_eq!(unique.len(), names.len());
        assert_eq!(names[0], "translator.e2e1.row_weights");
    }
}
