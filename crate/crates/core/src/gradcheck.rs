//! Finite-difference verification of every layer kind and both full models.

use serde::Serialize;

use crate::discriminator::{DiscriminatorCache, DiscriminatorConfig, DiscriminatorModel};
use crate::error::Result;
use crate::layers::{
    e2e_backward, e2e_deconv_backward, e2e_deconv_forward, e2e_forward, e2n_backward, e2n_forward, n2e_backward,
    n2e_forward, EdgeFeatureMap, LayerKind, LayerParams, NodeFeatureMap,
};
use crate::multiplex::BrainNetwork;
use crate::numerics::{dot, grad_check, DenseTensor, Prng};
use crate::translator::{Noise, Tap, TranslatorCache, TranslatorConfig, TranslatorModel};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckConfig {
    pub n: usize,
    /// Upper bound on channel counts (layers draw theirs from `1..=max_channels`).
    pub max_channels: usize,
    pub seeds: Vec<u64>,
    pub tolerance: f64,
    /// Scale every analytic gradient by `1 + fault` before comparing. Used as a
    /// negative control; 0 in normal runs.
    pub fault: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            n: 6,
            max_channels: 3,
            seeds: (0..5).collect(),
            tolerance: 1e-4,
            fault: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckRow {
    pub component: String,
    pub seed: u64,
    /// Number of checked scalar partial derivatives.
    pub coordinates: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

pub const COMPONENTS: [&str; 6] = [
    "e2e_conv",
    "e2e_deconv",
    "e2n_conv",
    "n2e_deconv",
    "translator",
    "discriminator",
];

fn edges(rng: &mut Prng, n: usize, c: usize) -> EdgeFeatureMap {
    EdgeFeatureMap::from_values(n, c, (0..n * n * c).map(|_| rng.uniform_in(-1.0, 1.0)).collect())
        .expect("sized edge map")
}

fn params(rng: &mut Prng, kind: LayerKind, n: usize, c_in: usize, c_out: usize) -> LayerParams {
    let mut p = LayerParams::init(kind, n, c_in, c_out, rng);
    for v in p.bias_mut().data_mut() {
        *v = rng.uniform_in(-0.5, 0.5);
    }
    p
}

fn network(rng: &mut Prng, n: usize) -> BrainNetwork {
    let mut w = DenseTensor::zeros(&[n, n]);
    for i in 0..n {
        for j in 0..i {
            let v = rng.uniform();
            w[(i, j)] = v;
            w[(j, i)] = v;
        }
    }
    BrainNetwork::new(w, "gradcheck").expect("valid random network")
}

/// Error of `analytic` (after fault scaling) against central differences.
fn compare(f: impl FnMut(&[f64]) -> f64, analytic: &[f64], point: &[f64], fault: f64) -> f64 {
    let scaled: Vec<f64> = analytic.iter().map(|g| g * (1.0 + fault)).collect();
    grad_check(f, &scaled, point)
}

fn check_layer(kind: LayerKind, cfg: &GradCheckConfig, seed: u64) -> Result<(usize, f64)> {
    let mut rng = Prng::new(seed).split(kind.name());
    let n = cfg.n;
    let c_in = 1 + rng.index(cfg.max_channels);
    let c_out = 1 + rng.index(cfg.max_channels);
    let p = params(&mut rng, kind, n, c_in, c_out);
    let flat_p = p.flatten();
    match kind {
        LayerKind::E2eConv | LayerKind::E2eDeconv => {
            type Fwd = fn(&EdgeFeatureMap, &LayerParams) -> Result<EdgeFeatureMap>;
            type Bwd = fn(&EdgeFeatureMap, &LayerParams, &EdgeFeatureMap) -> Result<(EdgeFeatureMap, LayerParams)>;
            let (fwd, bwd): (Fwd, Bwd) = if kind == LayerKind::E2eConv {
                (e2e_forward, e2e_backward)
            } else {
                (e2e_deconv_forward, e2e_deconv_backward)
            };
            let x = edges(&mut rng, n, c_in);
            let readout = edges(&mut rng, n, c_out);
            let (dx, dp) = bwd(&x, &p, &readout)?;
            let loss_x = |v: &[f64]| {
                let xx = EdgeFeatureMap::from_values(n, c_in, v.to_vec()).expect("sized");
                dot(fwd(&xx, &p).expect("forward").values(), readout.values())
            };
            let loss_p = |v: &[f64]| {
                let mut pp = p.clone();
                pp.set_flat(v);
                dot(fwd(&x, &pp).expect("forward").values(), readout.values())
            };
            let ex = compare(loss_x, dx.values(), x.values(), cfg.fault);
            let ep = compare(loss_p, &dp.flatten(), &flat_p, cfg.fault);
            Ok((x.values().len() + flat_p.len(), ex.max(ep)))
        }
        LayerKind::E2nConv => {
            let x = edges(&mut rng, n, c_in);
            let readout = NodeFeatureMap::gaussian(n, c_out, &mut rng);
            let (dx, dp) = e2n_backward(&x, &p, &readout)?;
            let loss_x = |v: &[f64]| {
                let xx = EdgeFeatureMap::from_values(n, c_in, v.to_vec()).expect("sized");
                dot(e2n_forward(&xx, &p).expect("forward").values(), readout.values())
            };
            let loss_p = |v: &[f64]| {
                let mut pp = p.clone();
                pp.set_flat(v);
                dot(e2n_forward(&x, &pp).expect("forward").values(), readout.values())
            };
            let ex = compare(loss_x, dx.values(), x.values(), cfg.fault);
            let ep = compare(loss_p, &dp.flatten(), &flat_p, cfg.fault);
            Ok((x.values().len() + flat_p.len(), ex.max(ep)))
        }
        LayerKind::N2eDeconv => {
            let h = NodeFeatureMap::gaussian(n, c_in, &mut rng);
            let readout = edges(&mut rng, n, c_out);
            let (dh, dp) = n2e_backward(&h, &p, &readout)?;
            let loss_h = |v: &[f64]| {
                let hh = NodeFeatureMap::from_values(n, c_in, v.to_vec()).expect("sized");
                dot(n2e_forward(&hh, &p).expect("forward").values(), readout.values())
            };
            let loss_p = |v: &[f64]| {
                let mut pp = p.clone();
                pp.set_flat(v);
                dot(n2e_forward(&h, &pp).expect("forward").values(), readout.values())
            };
            let eh = compare(loss_h, dh.values(), h.values(), cfg.fault);
            let ep = compare(loss_p, &dp.flatten(), &flat_p, cfg.fault);
            Ok((h.values().len() + flat_p.len(), eh.max(ep)))
        }
    }
}

fn small_translator(cfg: &GradCheckConfig) -> TranslatorConfig {
    let c = cfg.max_channels;
    TranslatorConfig {
        enc_channels: (c.max(2) - 1, c),
        node_dim: c,
        noise_dim: c.max(2) - 1,
        ..TranslatorConfig::new(cfg.n)
    }
}

fn set_layers(layers: &mut [LayerParams], flat: &[f64]) {
    let mut off = 0;
    for l in layers {
        let k = l.num_values();
        l.set_flat(&flat[off..off + k]);
        off += k;
    }
}

/// Parameters and noise of the translator under `<output, readout>`.
fn check_translator(cfg: &GradCheckConfig, seed: u64) -> Result<(usize, f64)> {
    let mut rng = Prng::new(seed).split("translator");
    let mut model = TranslatorModel::new(small_translator(cfg), &rng.split("init"))?;
    for l in &mut model.layers {
        for v in l.bias_mut().data_mut() {
            *v = rng.uniform_in(-0.5, 0.5);
        }
    }
    let n = cfg.n;
    let source = network(&mut rng, n);
    let noise = NodeFeatureMap::gaussian(n, model.config.noise_dim, &mut rng);
    let readout = network(&mut rng, n);
    let mut cache = TranslatorCache::default();
    model.forward(&source, Noise::Given(&noise), &mut cache)?;
    let grads = model.backward(&cache, readout.weights())?;

    let analytic: Vec<f64> = grads.layers.iter().flat_map(LayerParams::flatten).collect();
    let point: Vec<f64> = model.layers.iter().flat_map(LayerParams::flatten).collect();
    let loss_p = |flat: &[f64]| {
        let mut m = model.clone();
        set_layers(&mut m.layers, flat);
        let out = m.translate(&source, Noise::Given(&noise), Tap::None).expect("translate");
        dot(out.predicted.weights().data(), readout.weights().data())
    };
    let loss_u = |v: &[f64]| {
        let u = NodeFeatureMap::from_values(n, noise.channels(), v.to_vec()).expect("sized");
        let out = model.translate(&source, Noise::Given(&u), Tap::None).expect("translate");
        dot(out.predicted.weights().data(), readout.weights().data())
    };
    let ep = compare(loss_p, &analytic, &point, cfg.fault);
    let eu = compare(loss_u, grads.noise.values(), noise.values(), cfg.fault);
    Ok((point.len() + noise.values().len(), ep.max(eu)))
}

/// Parameters and both inputs of the discriminator under `-log D`.
fn check_discriminator(cfg: &GradCheckConfig, seed: u64) -> Result<(usize, f64)> {
    let mut rng = Prng::new(seed).split("discriminator");
    let c = cfg.max_channels;
    let dcfg = DiscriminatorConfig {
        channels: (c.max(2) - 1, c),
        node_dim: c,
        ..DiscriminatorConfig::new(cfg.n)
    };
    let mut model = DiscriminatorModel::new(dcfg, &rng.split("init"))?;
    for l in &mut model.layers {
        for v in l.bias_mut().data_mut() {
            *v = rng.uniform_in(-0.5, 0.5);
        }
    }
    let n = cfg.n;
    let cond = network(&mut rng, n).into_weights();
    let cand = network(&mut rng, n).into_weights();
    let mut cache = DiscriminatorCache::default();
    let p = model.forward(&cond, &cand, &mut cache)?;
    let grads = model.backward(&cache, -1.0 / p)?;

    let analytic: Vec<f64> = grads.tensors().iter().flat_map(|t| t.data().to_vec()).collect();
    let point: Vec<f64> = model.named_tensors().iter().flat_map(|(_, t)| t.data().to_vec()).collect();
    let loss_p = |flat: &[f64]| {
        let mut m = model.clone();
        let mut it = flat.iter();
        for t in m.tensors_mut() {
            for v in t.data_mut() {
                *v = *it.next().expect("flat length");
            }
        }
        -m.discriminate(&cond, &cand).expect("discriminate").ln()
    };
    let as_matrix = |v: &[f64]| DenseTensor::from_vec(&[n, n], v.to_vec()).expect("sized");
    let loss_cond = |v: &[f64]| -model.discriminate(&as_matrix(v), &cand).expect("discriminate").ln();
    let loss_cand = |v: &[f64]| -model.discriminate(&cond, &as_matrix(v)).expect("discriminate").ln();
    let ep = compare(loss_p, &analytic, &point, cfg.fault);
    let ec = compare(loss_cond, grads.condition.data(), cond.data(), cfg.fault);
    let ek = compare(loss_cand, grads.candidate.data(), cand.data(), cfg.fault);
    Ok((point.len() + 2 * n * n, ep.max(ec).max(ek)))
}

/// Runs every component for every seed.
pub fn run_suite(cfg: &GradCheckConfig) -> Result<Vec<GradCheckRow>> {
    let mut rows = Vec::with_capacity(COMPONENTS.len() * cfg.seeds.len());
    for &component in &COMPONENTS {
        for &seed in &cfg.seeds {
            let (coordinates, err) = match component {
                "translator" => check_translator(cfg, seed)?,
                "discriminator" => check_discriminator(cfg, seed)?,
                name => {
                    let kind = LayerKind::ALL.into_iter().find(|k| k.name() == name).expect("known layer");
                    check_layer(kind, cfg, seed)?
                }
            };
            rows.push(GradCheckRow {
                component: component.to_string(),
                seed,
                coordinates,
                max_rel_error: err,
                passed: err < cfg.tolerance,
            });
        }
    }
    Ok(rows)
}
