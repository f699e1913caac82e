//! Adversarial training of the translator against the conditional
//! discriminator, with an L1 term on the predicted edges.

use serde::{Deserialize, Serialize};

use crate::data::Subject;
use crate::discriminator::{DiscriminatorCache, DiscriminatorConfig, DiscriminatorModel};
use crate::error::{Error, Result};
use crate::multiplex::BrainNetwork;
use crate::numerics::{DenseTensor, Prng};
use crate::translator::{Noise, TranslatorCache, TranslatorConfig, TranslatorModel};

/// Probabilities fed to a log are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]`.
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorLoss {
    /// Minimize `log(1 - D(fake))`.
    Saturating,
    /// Minimize `-log D(fake)`.
    Nonsaturating,
}

/// Which network conditions the discriminator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pairing {
    /// Real pair `(source, target)`, fake pair `(source, predicted)`.
    SourceConditioned,
    /// Real pair `(source, target)`, fake pair `(target, predicted)`.
    TargetConditioned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_t: f64,
    pub lr_d: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub lambda_l1: f64,
    pub d_steps_per_g_step: usize,
    pub generator_loss: GeneratorLoss,
    pub pairing: Pairing,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            batch_size: 10,
            lr_t: 5e-4,
            lr_d: 5e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
            lambda_l1: 1.0,
            d_steps_per_g_step: 1,
            generator_loss: GeneratorLoss::Saturating,
            pairing: Pairing::SourceConditioned,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let rates = [self.lr_t, self.lr_d, self.eps];
        if rates.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(Error::Config("learning rates and eps must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.lambda_l1.is_finite() && self.lambda_l1 >= 0.0) {
            return Err(Error::Config("lambda_l1 must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<DenseTensor>,
    pub v: Vec<DenseTensor>,
    pub t: u64,
}

impl AdamState {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a DenseTensor>) -> Self {
        let m: Vec<DenseTensor> = params.into_iter().map(DenseTensor::zeros_like).collect();
        Self { v: m.clone(), m, t: 0 }
    }
}

/// One bias-corrected Adam update in place.
pub fn adam_step(
    params: &mut [&mut DenseTensor],
    grads: &[&DenseTensor],
    state: &mut AdamState,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::shape(format!(
            "adam: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (k, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || p.shape() != state.m[k].shape() {
            return Err(Error::shape(format!(
                "adam: tensor {k} has shape {:?}, gradient {:?}",
                p.shape(),
                g.shape()
            )));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = state.m[k].data_mut();
        let v = state.v[k].data_mut();
        for (((x, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
            *mi = beta1 * *mi + (1.0 - beta1) * gi;
            *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
            *x -= lr * (*mi / c1) / ((*vi / c2).sqrt() + eps);
        }
    }
    Ok(())
}

/// `(clamped p, true if p was inside the clamp range)`.
fn clamp_prob(p: f64) -> (f64, bool) {
    let c = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    (c, c == p)
}

fn condition<'a>(pairing: Pairing, source: &'a BrainNetwork, target: &'a BrainNetwork) -> &'a DenseTensor {
    match pairing {
        Pairing::SourceConditioned => source.weights(),
        Pairing::TargetConditioned => target.weights(),
    }
}

/// Batch-mean discriminator and translator adversarial losses.
pub fn adversarial_loss(
    d: &DiscriminatorModel,
    sources: &[&BrainNetwork],
    real: &[&BrainNetwork],
    fake: &[&BrainNetwork],
    mode: GeneratorLoss,
    pairing: Pairing,
) -> Result<(f64, f64)> {
    if sources.len() != real.len() || sources.len() != fake.len() {
        return Err(Error::shape("adversarial_loss: batch lengths differ"));
    }
    if sources.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (mut loss_d, mut loss_t) = (0.0, 0.0);
    for ((s, r), f) in sources.iter().zip(real).zip(fake) {
        let (p_real, _) = clamp_prob(d.discriminate(s.weights(), r.weights())?);
        let (p_fake, _) = clamp_prob(d.discriminate(condition(pairing, s, r), f.weights())?);
        loss_d -= p_real.ln() + (1.0 - p_fake).ln();
        loss_t += generator_term(mode, p_fake);
    }
    let b = sources.len() as f64;
    Ok((loss_d / b, loss_t / b))
}

fn generator_term(mode: GeneratorLoss, p_fake: f64) -> f64 {
    match mode {
        GeneratorLoss::Saturating => (1.0 - p_fake).ln(),
        GeneratorLoss::Nonsaturating => -p_fake.ln(),
    }
}

/// `∂ generator_term / ∂D`, zero where the clamp is active.
fn generator_term_grad(mode: GeneratorLoss, p_fake: f64) -> f64 {
    let (p, inside) = clamp_prob(p_fake);
    if !inside {
        return 0.0;
    }
    match mode {
        GeneratorLoss::Saturating => -1.0 / (1.0 - p),
        GeneratorLoss::Nonsaturating => -1.0 / p,
    }
}

/// Per-network L1 distance over the upper off-diagonal triangle.
fn l1_single(real: &DenseTensor, fake: &DenseTensor) -> Result<f64> {
    if real.shape() != fake.shape() || !real.is_square() {
        return Err(Error::shape(format!(
            "l1_loss: shapes {:?} and {:?}",
            real.shape(),
            fake.shape()
        )));
    }
    let n = real.rows();
    let mut total = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            total += (real[(i, j)] - fake[(i, j)]).abs();
        }
    }
    Ok(total)
}

/// Mean over subjects of the upper-triangle absolute difference sum.
pub fn l1_loss(real: &[&BrainNetwork], fake: &[&BrainNetwork]) -> Result<f64> {
    if real.len() != fake.len() {
        return Err(Error::shape("l1_loss: batch lengths differ"));
    }
    if real.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut total = 0.0;
    for (r, f) in real.iter().zip(fake) {
        total += l1_single(r.weights(), f.weights())?;
    }
    Ok(total / real.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub loss_d: f64,
    pub loss_t_adv: f64,
    pub loss_l1: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub translator: TranslatorModel,
    pub discriminator: DiscriminatorModel,
    pub trace: Vec<EpochLoss>,
}

struct Pair<'a> {
    source: &'a BrainNetwork,
    target: &'a BrainNetwork,
}

fn add_into(acc: &mut [DenseTensor], grads: Vec<&DenseTensor>) {
    for (a, g) in acc.iter_mut().zip(grads) {
        a.axpy(1.0, g).expect("gradient shapes match parameters");
    }
}

/// Initial models for a training run; `train` with zero epochs returns these.
pub fn init_models(
    tcfg: &TranslatorConfig,
    dcfg: &DiscriminatorConfig,
    seed: u64,
) -> Result<(TranslatorModel, DiscriminatorModel)> {
    let root = Prng::new(seed);
    Ok((
        TranslatorModel::new(tcfg.clone(), &root.split("init"))?,
        DiscriminatorModel::new(dcfg.clone(), &root.split("init"))?,
    ))
}

/// Translator gradient for one batch: the adversarial term through a fixed
/// discriminator (skipped when `d_steps_per_g_step = 0`) plus `λ_L1` times the
/// L1 subgradient. Also returns the batch sums of `(loss_D, loss_T_adv, loss_L1)`.
fn translator_batch_grads(
    t_model: &TranslatorModel,
    d_model: &DiscriminatorModel,
    batch: &[&Pair],
    noise_rng: &mut Prng,
    cfg: &TrainConfig,
) -> Result<(Vec<DenseTensor>, [f64; 3])> {
    let n = t_model.config.n;
    let scale = 1.0 / batch.len() as f64;
    let adversarial = cfg.d_steps_per_g_step > 0;
    let mut sums = [0.0f64; 3];
    let mut acc: Vec<DenseTensor> = t_model
        .named_tensors()
        .into_iter()
        .map(|(_, t)| t.zeros_like())
        .collect();
    for p in batch {
        let mut t_cache = TranslatorCache::default();
        let fake = t_model.forward(p.source, Noise::Sample(noise_rng), &mut t_cache)?;
        let cond = condition(cfg.pairing, p.source, p.target);
        let mut d_cache = DiscriminatorCache::default();
        let p_fake = d_model.forward(cond, fake.weights(), &mut d_cache)?;
        let (p_real, _) = clamp_prob(d_model.discriminate(p.source.weights(), p.target.weights())?);
        let (p_fake_c, _) = clamp_prob(p_fake);
        sums[0] -= p_real.ln() + (1.0 - p_fake_c).ln();
        sums[1] += generator_term(cfg.generator_loss, p_fake_c);
        sums[2] += l1_single(p.target.weights(), fake.weights())?;

        let mut d_pred = if adversarial {
            let g = d_model.backward(&d_cache, scale * generator_term_grad(cfg.generator_loss, p_fake))?;
            g.candidate
        } else {
            DenseTensor::zeros(&[n, n])
        };
        let (f, r) = (fake.weights(), p.target.weights());
        for i in 0..n {
            for j in i + 1..n {
                let diff = f[(i, j)] - r[(i, j)];
                if diff != 0.0 {
                    d_pred[(i, j)] += scale * cfg.lambda_l1 * diff.signum();
                }
            }
        }
        let g = t_model.backward(&t_cache, &d_pred)?;
        add_into(&mut acc, g.tensors());
    }
    Ok((acc, sums))
}

/// Alternating discriminator / translator optimization.
///
/// With `d_steps_per_g_step = 0` the discriminator is never trained and the
/// translator objective is the L1 term alone.
pub fn train(
    subjects: &[Subject],
    tcfg: &TranslatorConfig,
    dcfg: &DiscriminatorConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if subjects.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if tcfg.n != dcfg.n {
        return Err(Error::Config(format!(
            "translator n={} but discriminator n={}",
            tcfg.n, dcfg.n
        )));
    }
    let pairs: Vec<Pair> = subjects
        .iter()
        .map(|s| {
            s.target
                .as_ref()
                .map(|t| Pair { source: &s.source, target: t })
                .ok_or_else(|| Error::MissingTarget(s.id.clone()))
        })
        .collect::<Result<_>>()?;

    let (mut t_model, mut d_model) = init_models(tcfg, dcfg, cfg.seed)?;
    let root = Prng::new(cfg.seed);
    let mut order_rng = root.split("shuffle");
    let mut noise_rng = root.split("noise");
    let mut t_adam = AdamState::new(t_model.named_tensors().into_iter().map(|(_, t)| t));
    let mut d_adam = AdamState::new(d_model.named_tensors().into_iter().map(|(_, t)| t));

    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let order = order_rng.permutation(pairs.len());
        let mut sums = [0.0f64; 3];
        for batch in order.chunks(cfg.batch_size) {
            let scale = 1.0 / batch.len() as f64;

            for _ in 0..cfg.d_steps_per_g_step {
                let mut acc: Vec<DenseTensor> = d_adam.m.iter().map(DenseTensor::zeros_like).collect();
                for &k in batch {
                    let p = &pairs[k];
                    let fake = t_model
                        .translate(p.source, Noise::Sample(&mut noise_rng), crate::translator::Tap::None)?
                        .predicted;
                    let mut cache = DiscriminatorCache::default();
                    let p_real = d_model.forward(p.source.weights(), p.target.weights(), &mut cache)?;
                    if clamp_prob(p_real).1 {
                        let g = d_model.backward(&cache, -scale / p_real)?;
                        add_into(&mut acc, g.tensors());
                    }
                    let cond = condition(cfg.pairing, p.source, p.target);
                    let p_fake = d_model.forward(cond, fake.weights(), &mut cache)?;
                    if clamp_prob(p_fake).1 {
                        let g = d_model.backward(&cache, scale / (1.0 - p_fake))?;
                        add_into(&mut acc, g.tensors());
                    }
                }
                let grads: Vec<&DenseTensor> = acc.iter().collect();
                adam_step(
                    &mut d_model.tensors_mut(),
                    &grads,
                    &mut d_adam,
                    cfg.lr_d,
                    cfg.beta1,
                    cfg.beta2,
                    cfg.eps,
                )?;
            }

            let batch_pairs: Vec<&Pair> = batch.iter().map(|&k| &pairs[k]).collect();
            let (acc, losses) = translator_batch_grads(&t_model, &d_model, &batch_pairs, &mut noise_rng, cfg)?;
            for (total, v) in sums.iter_mut().zip(losses) {
                *total += v;
            }
            let grads: Vec<&DenseTensor> = acc.iter().collect();
            adam_step(
                &mut t_model.tensors_mut(),
                &grads,
                &mut t_adam,
                cfg.lr_t,
                cfg.beta1,
                cfg.beta2,
                cfg.eps,
            )?;
        }
        let count = pairs.len() as f64;
        let entry = EpochLoss {
            epoch,
            loss_d: sums[0] / count,
            loss_t_adv: sums[1] / count,
            loss_l1: sums[2] / count,
        };
        if ![entry.loss_d, entry.loss_t_adv, entry.loss_l1].iter().all(|v| v.is_finite()) {
            return Err(Error::Domain(format!("non-finite loss at epoch {epoch}")));
        }
        trace.push(entry);
    }
    Ok(TrainOutcome {
        translator: t_model,
        discriminator: d_model,
        trace,
    })
}
