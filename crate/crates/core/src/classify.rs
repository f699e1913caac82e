//! Cross-validated classification of subjects from single networks or
//! (predicted) multiplexes, and cross-fold biomarker scoring.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Subject};
use crate::discriminator::DiscriminatorConfig;
use crate::error::{Error, Result};
use crate::multiplex::{build_multiplex, vectorize_multiplex, vectorize_network, FeatureLayout, InterKind, LayerId};
use crate::numerics::{DenseTensor, Prng};
use crate::select::{ifs_rank, svm_train, IfsConfig, SvmConfig};
use crate::train::{train, TrainConfig};
use crate::translator::{Noise, Tap, TranslatorConfig, TranslatorModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    SourceOnly,
    PredictedMultiplex,
    GroundTruthMultiplex,
    LearnedPreRelu,
    LearnedPostRelu,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::SourceOnly,
        Variant::PredictedMultiplex,
        Variant::GroundTruthMultiplex,
        Variant::LearnedPreRelu,
        Variant::LearnedPostRelu,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::SourceOnly => "source_only",
            Variant::PredictedMultiplex => "predicted_multiplex",
            Variant::GroundTruthMultiplex => "ground_truth_multiplex",
            Variant::LearnedPreRelu => "learned_pre_relu",
            Variant::LearnedPostRelu => "learned_post_relu",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name() == s)
    }

    pub fn needs_translator(self) -> bool {
        !matches!(self, Variant::SourceOnly | Variant::GroundTruthMultiplex)
    }

    fn tap(self) -> Tap {
        match self {
            Variant::LearnedPreRelu => Tap::PreRelu,
            Variant::LearnedPostRelu => Tap::PostRelu,
            _ => Tap::None,
        }
    }

    pub fn layout(self, n: usize) -> FeatureLayout {
        match self {
            Variant::SourceOnly => FeatureLayout::single(n),
            _ => FeatureLayout::multiplex(n),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifyConfig {
    pub ifs: IfsConfig,
    pub svm: SvmConfig,
    pub train: TrainConfig,
    pub translator: TranslatorConfig,
    pub discriminator: DiscriminatorConfig,
    pub normalize_inter: bool,
    /// Build training-fold multiplexes from translator predictions rather
    /// than ground-truth targets.
    pub predicted_train_features: bool,
    pub folds: usize,
    pub seed: u64,
    /// Evaluate folds on the rayon pool; results match sequential runs.
    pub parallel: bool,
}

impl ClassifyConfig {
    pub fn new(n: usize) -> Self {
        Self {
            ifs: IfsConfig::default(),
            svm: SvmConfig::default(),
            train: TrainConfig::default(),
            translator: TranslatorConfig::new(n),
            discriminator: DiscriminatorConfig::new(n),
            normalize_inter: true,
            predicted_train_features: true,
            folds: 2,
            seed: 0,
            parallel: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariantReport {
    pub variant: Variant,
    pub n_f: Vec<usize>,
    /// `[fold][n_f]` test accuracy.
    pub fold_accuracy: Vec<Vec<f64>>,
    /// Mean over folds, per `n_f`.
    pub mean_accuracy: Vec<f64>,
    /// Mean of `mean_accuracy` over the sweep.
    pub sweep_mean: f64,
    /// IFS ranking of each fold's training features.
    pub rankings: Vec<Vec<usize>>,
    #[serde(skip)]
    pub layout: FeatureLayout,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassifyReport {
    /// Test-subject indices of each fold.
    pub folds: Vec<Vec<usize>>,
    pub variants: Vec<VariantReport>,
}

impl ClassifyReport {
    pub fn variant(&self, v: Variant) -> Option<&VariantReport> {
        self.variants.iter().find(|r| r.variant == v)
    }
}

/// Test-index sets of a stratified k-fold split; each class is shuffled
/// from `seed` and dealt round-robin.
pub fn stratified_folds(labels: &[i8], folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if folds < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {folds}")));
    }
    let mut rng = Prng::new(seed).split("folds");
    let mut out = vec![Vec::new(); folds];
    let mut offset = 0;
    for class in [1i8, -1] {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&k| labels[k] == class).collect();
        if members.len() < folds {
            return Err(Error::InsufficientClassCount {
                label: class,
                count: members.len(),
                needed: folds,
            });
        }
        rng.shuffle(&mut members);
        for (pos, idx) in members.into_iter().enumerate() {
            out[(pos + offset) % folds].push(idx);
        }
        offset += labels.iter().filter(|&&l| l == class).count();
    }
    for f in &mut out {
        f.sort_unstable();
    }
    Ok(out)
}

/// Complement of `test` in `0..count`.
pub fn train_indices(count: usize, test: &[usize]) -> Vec<usize> {
    let mut mask = vec![true; count];
    for &t in test {
        mask[t] = false;
    }
    (0..count).filter(|&k| mask[k]).collect()
}

/// Translator trained on one fold's training subjects.
pub fn train_fold_translator(
    subjects: &[Subject],
    train_idx: &[usize],
    cfg: &ClassifyConfig,
    fold: usize,
) -> Result<TranslatorModel> {
    let fold_subjects: Vec<Subject> = train_idx.iter().map(|&k| subjects[k].clone()).collect();
    let train_cfg = TrainConfig {
        seed: fold_seed(cfg.seed, fold),
        ..cfg.train.clone()
    };
    Ok(train(&fold_subjects, &cfg.translator, &cfg.discriminator, &train_cfg)?.translator)
}

/// Training seed of a fold's translator, derived from the classification seed.
pub fn fold_seed(seed: u64, fold: usize) -> u64 {
    Prng::new(seed).split(&format!("fold.{fold}.train")).next_u64()
}

/// Feature vector of one subject under `variant`. `model` is required for
/// the translator-based variants; `use_truth` substitutes the ground-truth
/// target for the predicted one.
pub fn subject_features(
    subject: &Subject,
    variant: Variant,
    model: Option<&TranslatorModel>,
    use_truth: bool,
    normalize_inter: bool,
) -> Result<Vec<f64>> {
    let truth = || subject.target.clone().ok_or_else(|| Error::MissingTarget(subject.id.clone()));
    let mux = match variant {
        Variant::SourceOnly => return Ok(vectorize_network(&subject.source).values),
        Variant::GroundTruthMultiplex => {
            build_multiplex(subject.source.clone(), truth()?, InterKind::Conv, None, normalize_inter)?
        }
        _ => {
            let model = model.ok_or_else(|| Error::Config(format!("{} needs a translator", variant.name())))?;
            let out = model.translate(&subject.source, Noise::Zero, variant.tap())?;
            let target = if use_truth { truth()? } else { out.predicted };
            let kind = match variant {
                Variant::LearnedPreRelu => InterKind::LearnedPreRelu,
                Variant::LearnedPostRelu => InterKind::LearnedPostRelu,
                _ => InterKind::Conv,
            };
            build_multiplex(subject.source.clone(), target, kind, out.tap.as_ref(), normalize_inter)?
        }
    };
    Ok(vectorize_multiplex(&mux).values)
}

fn feature_matrix(rows: Vec<Vec<f64>>) -> Result<DenseTensor> {
    DenseTensor::from_rows(&rows)
}

struct FoldResult {
    accuracy: Vec<Vec<f64>>,
    rankings: Vec<Vec<usize>>,
}

fn run_fold(
    dataset: &Dataset,
    variants: &[Variant],
    cfg: &ClassifyConfig,
    fold: usize,
    test_idx: &[usize],
) -> Result<FoldResult> {
    let subjects = &dataset.subjects;
    let train_idx = train_indices(subjects.len(), test_idx);
    let model = if variants.iter().any(|v| v.needs_translator()) {
        Some(train_fold_translator(subjects, &train_idx, cfg, fold)?)
    } else {
        None
    };
    let y_train: Vec<i8> = train_idx.iter().map(|&k| subjects[k].label).collect();
    let y_test: Vec<i8> = test_idx.iter().map(|&k| subjects[k].label).collect();

    let mut accuracy = Vec::with_capacity(variants.len());
    let mut rankings = Vec::with_capacity(variants.len());
    for &variant in variants {
        let train_truth = variant.needs_translator() && !cfg.predicted_train_features;
        let x_train = feature_matrix(
            train_idx
                .iter()
                .map(|&k| subject_features(&subjects[k], variant, model.as_ref(), train_truth, cfg.normalize_inter))
                .collect::<Result<_>>()?,
        )?;
        let x_test = feature_matrix(
            test_idx
                .iter()
                .map(|&k| subject_features(&subjects[k], variant, model.as_ref(), false, cfg.normalize_inter))
                .collect::<Result<_>>()?,
        )?;
        let (accs, ranking) = select_and_score(&x_train, &y_train, &x_test, &y_test, &cfg.ifs, &cfg.svm)?;
        accuracy.push(accs);
        rankings.push(ranking);
    }
    Ok(FoldResult { accuracy, rankings })
}

/// Ranks the training features with IFS, then for each `n_f` fits an SVM on
/// the top `n_f` columns and scores it on the test rows. Returns the
/// accuracies (one per `n_f`) and the ranking.
pub fn select_and_score(
    x_train: &DenseTensor,
    y_train: &[i8],
    x_test: &DenseTensor,
    y_test: &[i8],
    ifs: &IfsConfig,
    svm: &SvmConfig,
) -> Result<(Vec<f64>, Vec<usize>)> {
    let ranking = ifs_rank(x_train, ifs)?.ranking;
    let mut accs = Vec::with_capacity(ifs.n_f_values.len());
    for &n_f in &ifs.n_f_values {
        let keep = &ranking[..n_f.min(ranking.len())];
        let model = svm_train(&select_columns(x_train, keep), y_train, svm)?;
        accs.push(model.accuracy(&select_columns(x_test, keep), y_test));
    }
    Ok((accs, ranking))
}

pub fn select_columns(x: &DenseTensor, keep: &[usize]) -> DenseTensor {
    let rows = x.rows();
    let mut data = Vec::with_capacity(rows * keep.len());
    for s in 0..rows {
        let row = x.row(s);
        data.extend(keep.iter().map(|&f| row[f]));
    }
    DenseTensor::from_vec(&[rows, keep.len()], data).expect("selected shape")
}

/// Stratified k-fold evaluation of each variant over the `n_f` sweep.
pub fn classify_cv(dataset: &Dataset, variants: &[Variant], cfg: &ClassifyConfig) -> Result<ClassifyReport> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if variants.is_empty() {
        return Err(Error::Config("no variants requested".into()));
    }
    cfg.ifs.validate()?;
    if variants.iter().any(|v| *v != Variant::SourceOnly) {
        dataset.require_targets()?;
    }
    if cfg.translator.n != dataset.n || cfg.discriminator.n != dataset.n {
        return Err(Error::Config(format!(
            "model configs are for n={}, dataset has n={}",
            cfg.translator.n, dataset.n
        )));
    }
    let folds = stratified_folds(&dataset.labels(), cfg.folds, cfg.seed)?;
    let results: Vec<FoldResult> = if cfg.parallel {
        folds
            .par_iter()
            .enumerate()
            .map(|(f, test)| run_fold(dataset, variants, cfg, f, test))
            .collect::<Result<_>>()?
    } else {
        folds
            .iter()
            .enumerate()
            .map(|(f, test)| run_fold(dataset, variants, cfg, f, test))
            .collect::<Result<_>>()?
    };

    let reports = variants
        .iter()
        .enumerate()
        .map(|(v, &variant)| {
            let fold_accuracy: Vec<Vec<f64>> = results.iter().map(|r| r.accuracy[v].clone()).collect();
            let mean_accuracy: Vec<f64> = (0..cfg.ifs.n_f_values.len())
                .map(|k| fold_accuracy.iter().map(|f| f[k]).sum::<f64>() / fold_accuracy.len() as f64)
                .collect();
            let sweep_mean = mean_accuracy.iter().sum::<f64>() / mean_accuracy.len() as f64;
            VariantReport {
                variant,
                n_f: cfg.ifs.n_f_values.clone(),
                fold_accuracy,
                mean_accuracy,
                sweep_mean,
                rankings: results.iter().map(|r| r.rankings[v].clone()).collect(),
                layout: variant.layout(dataset.n),
            }
        })
        .collect();
    Ok(ClassifyReport {
        folds,
        variants: reports,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarkerEntry {
    pub feature: usize,
    pub layer: LayerId,
    pub roi_i: usize,
    pub roi_j: usize,
    pub score: f64,
    /// Number of folds whose top-`n_f` set contains the feature.
    pub occurrences: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarkerReport {
    pub n_f: usize,
    pub entries: Vec<MarkerEntry>,
}

/// `score(f) = Σ_folds 1[rank(f) ≤ n_f] · (n_f − rank(f) + 1) / n_f`, ranks 1-based.
pub fn marker_scores(rankings: &[Vec<usize>], n_f: usize, features: usize) -> (Vec<f64>, Vec<usize>) {
    let mut scores = vec![0.0; features];
    let mut occurrences = vec![0; features];
    for ranking in rankings {
        for (pos, &f) in ranking.iter().take(n_f).enumerate() {
            scores[f] += (n_f - pos) as f64 / n_f as f64;
            occurrences[f] += 1;
        }
    }
    (scores, occurrences)
}

/// Features by descending cross-fold score (ties by index), top `top` mapped
/// to their layer and ROI pair.
pub fn score_markers(rankings: &[Vec<usize>], n_f: usize, layout: &FeatureLayout, top: usize) -> Result<MarkerReport> {
    if rankings.is_empty() {
        return Err(Error::Config("no fold rankings to score".into()));
    }
    if n_f == 0 {
        return Err(Error::Config("n_f must be positive".into()));
    }
    if let Some(bad) = rankings.iter().flatten().find(|&&f| f >= layout.len()) {
        return Err(Error::shape(format!("feature {bad} outside a layout of {}", layout.len())));
    }
    let (scores, occurrences) = marker_scores(rankings, n_f, layout.len());
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let entries = order
        .into_iter()
        .take(top)
        .map(|f| {
            let (layer, roi_i, roi_j) = layout.entry(f);
            MarkerEntry {
                feature: f,
                layer,
                roi_i,
                roi_j,
                score: scores[f],
                occurrences: occurrences[f],
            }
        })
        .collect();
    Ok(MarkerReport { n_f, entries })
}
