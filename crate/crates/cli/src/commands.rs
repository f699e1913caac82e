use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use multiplex_forge::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use multiplex_forge::classify::{classify_cv, score_markers, ClassifyConfig, Variant};
use multiplex_forge::data::{generate_synthetic, load_dataset, save_dataset, Dataset, SynthConfig, TargetMap};
use multiplex_forge::discriminator::DiscriminatorConfig;
use multiplex_forge::gradcheck::{run_suite, GradCheckConfig};
use multiplex_forge::knn::{knn_mae_per_k, KnnConfig};
use multiplex_forge::multiplex::{mae, BrainNetwork};
use multiplex_forge::train::{train as train_models, GeneratorLoss, Pairing, TrainConfig};
use multiplex_forge::translator::{Noise, Tap, TranslatorConfig};
use multiplex_forge::Error;

use crate::report::{create_dir, finite, read_json, write_json, CsvOut, RunReport, FORMAT_VERSION, RUN_REPORT};
use crate::{
    ClassifyArgs, CliError, CliResult, EvaluateArgs, GeneratorLossArg, GradcheckArgs, MarkersArgs, PairingArg,
    SynthArgs, TargetMapArg, TrainArgs, TrainFlags,
};

pub const CHECKPOINT_FILE: &str = "checkpoint.ggan";
pub const TRACE_FILE: &str = "trace.csv";
pub const MAE_FILE: &str = "mae.csv";
pub const ACCURACY_FILE: &str = "accuracy.csv";
pub const CLASSIFY_FILE: &str = "classify.json";
pub const MARKERS_FILE: &str = "markers.csv";

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

pub fn synth(a: &SynthArgs) -> CliResult<()> {
    let mut cfg = SynthConfig::default();
    set(&mut cfg.n, a.n);
    set(&mut cfg.subjects, a.subjects);
    set(&mut cfg.seed, a.seed);
    set(&mut cfg.delta, a.delta);
    set(&mut cfg.target_delta, a.target_delta);
    set(&mut cfg.signal_nodes, a.signal_nodes);
    set(&mut cfg.signal_spread, a.signal_spread);
    set(&mut cfg.positive_fraction, a.positive_fraction);
    if let Some(m) = a.target_map {
        cfg.target_map = match m {
            TargetMapArg::Mixed => TargetMap::Mixed,
            TargetMapArg::Identity => TargetMap::Identity,
        };
    }
    let dataset = generate_synthetic(&cfg)?;
    let manifest = save_dataset(&dataset, &a.out)?;
    println!(
        "wrote {} subjects (n = {}) to {}",
        dataset.len(),
        dataset.n,
        manifest.display()
    );
    Ok(())
}

fn train_config(flags: &TrainFlags, seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig {
        seed,
        ..TrainConfig::default()
    };
    set(&mut cfg.epochs, flags.epochs);
    set(&mut cfg.batch_size, flags.batch_size);
    set(&mut cfg.lambda_l1, flags.lambda_l1);
    set(&mut cfg.lr_t, flags.lr_t);
    set(&mut cfg.lr_d, flags.lr_d);
    set(&mut cfg.d_steps_per_g_step, flags.d_steps);
    if let Some(g) = flags.generator_loss {
        cfg.generator_loss = match g {
            GeneratorLossArg::Saturating => GeneratorLoss::Saturating,
            GeneratorLossArg::Nonsaturating => GeneratorLoss::Nonsaturating,
        };
    }
    if let Some(p) = flags.pairing {
        cfg.pairing = match p {
            PairingArg::Source => Pairing::SourceConditioned,
            PairingArg::Target => Pairing::TargetConditioned,
        };
    }
    cfg
}

#[derive(Serialize)]
struct TrainEcho<'a> {
    data: &'a Path,
    subjects: usize,
    train: &'a TrainConfig,
    translator: &'a TranslatorConfig,
    discriminator: &'a DiscriminatorConfig,
}

pub fn train(a: &TrainArgs) -> CliResult<()> {
    let start = Instant::now();
    let cfg = train_config(&a.train, a.seed);
    cfg.validate()?;
    let dataset = load_dataset(&a.data)?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset.into());
    }
    dataset.require_targets()?;
    let tcfg = TranslatorConfig::new(dataset.n);
    let dcfg = DiscriminatorConfig::new(dataset.n);
    let outcome = train_models(&dataset.subjects, &tcfg, &dcfg, &cfg)?;

    create_dir(&a.out)?;
    let mut trace = CsvOut::create(&a.out.join(TRACE_FILE), &["epoch", "loss_d", "loss_t_adv", "loss_l1"])?;
    for e in &outcome.trace {
        let what = format!("epoch {} loss", e.epoch);
        trace.row([
            e.epoch.to_string(),
            finite(&what, e.loss_d)?.to_string(),
            finite(&what, e.loss_t_adv)?.to_string(),
            finite(&what, e.loss_l1)?.to_string(),
        ])?;
    }
    trace.finish()?;
    let ck = Checkpoint {
        translator: outcome.translator,
        discriminator: outcome.discriminator,
        train: Some(cfg.clone()),
        seed: a.seed,
    };
    save_checkpoint(&ck, &a.out.join(CHECKPOINT_FILE))?;

    let report = RunReport {
        format_version: FORMAT_VERSION,
        command: "train",
        seed: a.seed,
        config: TrainEcho {
            data: &a.data,
            subjects: dataset.len(),
            train: &cfg,
            translator: &tcfg,
            discriminator: &dcfg,
        },
        metrics: serde_json::json!({ "epochs": outcome.trace.len(), "final": outcome.trace.last() }),
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    write_json(&a.out.join(RUN_REPORT), &report)?;
    println!("trained {} epochs on {} subjects; wrote {}", outcome.trace.len(), dataset.len(), a.out.display());
    Ok(())
}

/// Parses `lo..hi` (inclusive) or a comma-separated list.
pub fn parse_k_values(text: &str) -> CliResult<Vec<usize>> {
    let bad = || CliError::Usage(format!("invalid K list {text:?}; use lo..hi or a comma list"));
    let values: Vec<usize> = if let Some((lo, hi)) = text.split_once("..") {
        let lo: usize = lo.trim().parse().map_err(|_| bad())?;
        let hi: usize = hi.trim().parse().map_err(|_| bad())?;
        (lo..=hi).collect()
    } else {
        text.split(',')
            .map(|s| s.trim().parse().map_err(|_| bad()))
            .collect::<CliResult<_>>()?
    };
    if values.is_empty() || values.contains(&0) {
        return Err(bad());
    }
    Ok(values)
}

fn pairs(d: &Dataset) -> CliResult<Vec<(&BrainNetwork, &BrainNetwork)>> {
    d.require_targets()?;
    Ok(d.subjects
        .iter()
        .map(|s| (&s.source, s.target.as_ref().expect("targets checked")))
        .collect())
}

#[derive(Serialize)]
struct EvaluateEcho<'a> {
    data: &'a Path,
    train_data: &'a Path,
    ckpt: &'a Path,
    k_values: &'a [usize],
    noise: &'static str,
}

pub fn evaluate(a: &EvaluateArgs) -> CliResult<()> {
    let start = Instant::now();
    let k_values = parse_k_values(&a.knn_k)?;
    let test_set = load_dataset(&a.data)?;
    let train_path = a.train_data.clone().unwrap_or_else(|| a.data.clone());
    let train_set = if a.train_data.is_some() {
        load_dataset(&train_path)?
    } else {
        test_set.clone()
    };
    let ck = load_checkpoint(&a.ckpt)?;
    for d in [&test_set, &train_set] {
        if d.n != ck.translator.config.n {
            return Err(Error::ShapeMismatch(format!("checkpoint is for n={}, dataset has n={}", ck.translator.config.n, d.n)).into());
        }
    }
    let test = pairs(&test_set)?;
    let train = pairs(&train_set)?;

    let mut total = 0.0;
    for (source, truth) in &test {
        let pred = ck.translator.translate(source, Noise::Zero, Tap::None)?.predicted;
        total += mae(&pred, truth)?;
    }
    let ggan = finite("G-GAN MAE", total / test.len() as f64)?;
    let per_k = knn_mae_per_k(&train, &test, &KnnConfig { k_values: k_values.clone() })?;
    let knn_mean = finite("KNN MAE", per_k.iter().map(|(_, m)| m).sum::<f64>() / per_k.len() as f64)?;

    create_dir(&a.out)?;
    let mut csv = CsvOut::create(&a.out.join(MAE_FILE), &["method", "k", "mae"])?;
    csv.row(["ggan".into(), String::new(), ggan.to_string()])?;
    for (k, m) in &per_k {
        csv.row(["knn".into(), k.to_string(), finite("KNN MAE", *m)?.to_string()])?;
    }
    csv.row(["knn".into(), "mean".into(), knn_mean.to_string()])?;
    csv.finish()?;

    let report = RunReport {
        format_version: FORMAT_VERSION,
        command: "evaluate",
        seed: ck.seed,
        config: EvaluateEcho {
            data: &a.data,
            train_data: &train_path,
            ckpt: &a.ckpt,
            k_values: &k_values,
            noise: "zero",
        },
        metrics: serde_json::json!({
            "ggan_mae": ggan,
            "knn_mae": per_k.iter().map(|(k, m)| serde_json::json!({"k": k, "mae": m})).collect::<Vec<_>>(),
            "knn_mean_mae": knn_mean,
            "test_subjects": test.len(),
        }),
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    write_json(&a.out.join(RUN_REPORT), &report)?;
    println!("G-GAN MAE {ggan:.6}, mean KNN MAE {knn_mean:.6}");
    Ok(())
}

/// Parses `start:stop:step` with `stop` inclusive.
pub fn parse_nf_range(text: &str) -> CliResult<Vec<usize>> {
    let bad = || CliError::Usage(format!("invalid n_f range {text:?}; use start:stop:step"));
    let parts: Vec<usize> = text
        .split(':')
        .map(|s| s.trim().parse().map_err(|_| bad()))
        .collect::<CliResult<_>>()?;
    let (start, stop, step) = match parts[..] {
        [start, stop, step] => (start, stop, step),
        [start, stop] => (start, stop, 1),
        [single] => (single, single, 1),
        _ => return Err(bad()),
    };
    if start == 0 || step == 0 || stop < start {
        return Err(bad());
    }
    Ok((start..=stop).step_by(step).collect())
}

/// Body of `classify.json`; `markers` reads it back.
#[derive(Debug, Serialize, Deserialize)]
pub struct ClassifyFile {
    pub format_version: u32,
    pub n: usize,
    pub seed: u64,
    /// Test-subject indices of each fold.
    pub folds: Vec<Vec<usize>>,
    pub variants: Vec<VariantEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct VariantEntry {
    pub variant: String,
    pub n_f: Vec<usize>,
    pub fold_accuracy: Vec<Vec<f64>>,
    pub mean_accuracy: Vec<f64>,
    pub sweep_mean: f64,
    pub rankings: Vec<Vec<usize>>,
}

#[derive(Serialize)]
struct ClassifyEcho<'a> {
    data: &'a Path,
    variants: Vec<&'static str>,
    threads: usize,
    classify: &'a ClassifyConfig,
}

pub fn classify(a: &ClassifyArgs, threads: usize) -> CliResult<()> {
    let start = Instant::now();
    let variants: Vec<Variant> = if a.variants.is_empty() {
        Variant::ALL.to_vec()
    } else {
        a.variants
            .iter()
            .map(|s| {
                Variant::parse(s).ok_or_else(|| {
                    let names: Vec<_> = Variant::ALL.iter().map(|v| v.name()).collect();
                    CliError::Usage(format!("unknown variant {s:?}; expected one of {}", names.join(", ")))
                })
            })
            .collect::<CliResult<_>>()?
    };
    let n_f_values = parse_nf_range(&a.nf_range)?;
    let dataset = load_dataset(&a.data)?;
    let mut cfg = ClassifyConfig::new(dataset.n);
    cfg.ifs.n_f_values = n_f_values;
    cfg.train = train_config(&a.train, 0);
    cfg.train.validate()?;
    cfg.folds = a.folds;
    cfg.seed = a.seed;
    cfg.predicted_train_features = !a.truth_train_features;
    cfg.parallel = threads > 1;
    for &v in &variants {
        let features = v.layout(dataset.n).len();
        if let Some(&big) = cfg.ifs.n_f_values.iter().find(|&&f| f > features) {
            return Err(CliError::Usage(format!(
                "n_f = {big} exceeds the {features} features of {}",
                v.name()
            )));
        }
    }
    let report = classify_cv(&dataset, &variants, &cfg)?;

    create_dir(&a.out)?;
    let mut header = vec!["variant".to_string(), "n_f".into(), "mean_accuracy".into()];
    header.extend((0..report.folds.len()).map(|f| format!("fold_{f}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut csv = CsvOut::create(&a.out.join(ACCURACY_FILE), &header)?;
    for v in &report.variants {
        for (k, n_f) in v.n_f.iter().enumerate() {
            let mut row = vec![v.variant.name().to_string(), n_f.to_string()];
            row.push(finite("accuracy", v.mean_accuracy[k])?.to_string());
            for fold in &v.fold_accuracy {
                row.push(finite("accuracy", fold[k])?.to_string());
            }
            csv.row(row)?;
        }
    }
    csv.finish()?;

    let file = ClassifyFile {
        format_version: FORMAT_VERSION,
        n: dataset.n,
        seed: a.seed,
        folds: report.folds.clone(),
        variants: report
            .variants
            .iter()
            .map(|v| VariantEntry {
                variant: v.variant.name().to_string(),
                n_f: v.n_f.clone(),
                fold_accuracy: v.fold_accuracy.clone(),
                mean_accuracy: v.mean_accuracy.clone(),
                sweep_mean: v.sweep_mean,
                rankings: v.rankings.clone(),
            })
            .collect(),
    };
    write_json(&a.out.join(CLASSIFY_FILE), &file)?;

    let summary: serde_json::Map<String, serde_json::Value> = report
        .variants
        .iter()
        .map(|v| (v.variant.name().to_string(), serde_json::json!(v.sweep_mean)))
        .collect();
    let run = RunReport {
        format_version: FORMAT_VERSION,
        command: "classify",
        seed: a.seed,
        config: ClassifyEcho {
            data: &a.data,
            variants: variants.iter().map(|v| v.name()).collect(),
            threads,
            classify: &cfg,
        },
        metrics: serde_json::json!({ "sweep_mean_accuracy": summary }),
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    write_json(&a.out.join(RUN_REPORT), &run)?;
    for v in &report.variants {
        println!("{:<24} mean accuracy {:.4}", v.variant.name(), v.sweep_mean);
    }
    Ok(())
}

fn report_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join(CLASSIFY_FILE)
    } else {
        p.to_path_buf()
    }
}

fn read_roi_names(path: &Path, n: usize) -> CliResult<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let names: Vec<String> = text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect();
    if names.len() != n {
        return Err(Error::SizeMismatch {
            expected: n,
            actual: names.len(),
        }
        .into());
    }
    Ok(names)
}

#[derive(Serialize)]
struct MarkersEcho<'a> {
    report: &'a Path,
    variant: &'a str,
    n_f: usize,
    top: usize,
    roi_names: Option<&'a Path>,
}

pub fn markers(a: &MarkersArgs) -> CliResult<()> {
    let start = Instant::now();
    let path = report_path(&a.report);
    let file: ClassifyFile = read_json(&path)?;
    let variant = Variant::parse(&a.variant).ok_or_else(|| CliError::Usage(format!("unknown variant {:?}", a.variant)))?;
    let entry = file
        .variants
        .iter()
        .find(|v| v.variant == a.variant)
        .ok_or_else(|| CliError::Usage(format!("{} holds no {} results", path.display(), a.variant)))?;
    let n_f = match a.n_f {
        Some(n_f) => n_f,
        None => *entry
            .n_f
            .get(entry.n_f.len() / 2)
            .ok_or_else(|| Error::Format(format!("{} has an empty n_f sweep", path.display())))?,
    };
    if a.top == 0 {
        return Err(CliError::Usage("--top must be positive".into()));
    }
    let names = a.roi_names.as_deref().map(|p| read_roi_names(p, file.n)).transpose()?;
    let layout = variant.layout(file.n);
    let markers = score_markers(&entry.rankings, n_f, &layout, a.top)?;

    create_dir(&a.out)?;
    let mut csv = CsvOut::create(
        &a.out.join(MARKERS_FILE),
        &["rank", "layer", "roi_i", "roi_j", "name_i", "name_j", "feature", "score", "occurrences"],
    )?;
    let name = |i: usize| names.as_ref().map(|v| v[i].clone()).unwrap_or_default();
    for (r, m) in markers.entries.iter().enumerate() {
        csv.row([
            (r + 1).to_string(),
            m.layer.name().to_string(),
            m.roi_i.to_string(),
            m.roi_j.to_string(),
            name(m.roi_i),
            name(m.roi_j),
            m.feature.to_string(),
            m.score.to_string(),
            m.occurrences.to_string(),
        ])?;
    }
    csv.finish()?;

    let run = RunReport {
        format_version: FORMAT_VERSION,
        command: "markers",
        seed: file.seed,
        config: MarkersEcho {
            report: &path,
            variant: &a.variant,
            n_f,
            top: a.top,
            roi_names: a.roi_names.as_deref(),
        },
        metrics: serde_json::json!({ "markers": markers.entries.len(), "folds": entry.rankings.len() }),
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    write_json(&a.out.join(RUN_REPORT), &run)?;
    for (r, m) in markers.entries.iter().enumerate() {
        println!("{:>2}. {:<6} ({:>2}, {:>2}) score {:.4}", r + 1, m.layer.name(), m.roi_i, m.roi_j, m.score);
    }
    Ok(())
}

pub fn gradcheck(a: &GradcheckArgs) -> CliResult<()> {
    let cfg = GradCheckConfig {
        n: a.n,
        seeds: (0..a.seeds).collect(),
        tolerance: a.tolerance,
        fault: a.inject_fault,
        ..GradCheckConfig::default()
    };
    let rows = run_suite(&cfg)?;
    if let Some(out) = &a.out {
        let mut csv = CsvOut::create(out, &["component", "seed", "coordinates", "max_rel_error", "passed"])?;
        for r in &rows {
            csv.row([
                r.component.clone(),
                r.seed.to_string(),
                r.coordinates.to_string(),
                format!("{:e}", r.max_rel_error),
                r.passed.to_string(),
            ])?;
        }
        csv.finish()?;
    }
    let mut components: Vec<&str> = rows.iter().map(|r| r.component.as_str()).collect();
    components.dedup();
    for c in &components {
        let mine: Vec<_> = rows.iter().filter(|r| r.component == *c).collect();
        let worst = mine.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
        let ok = mine.iter().all(|r| r.passed);
        println!(
            "{:<14} {} seeds  max rel error {:.3e}  {}",
            c,
            mine.len(),
            worst,
            if ok { "PASS" } else { "FAIL" }
        );
    }
    let failed = rows.iter().filter(|r| !r.passed).count();
    if failed > 0 {
        return Err(CliError::Numeric(format!("{failed} of {} gradient checks failed", rows.len())));
    }
    println!("all {} gradient checks passed", rows.len());
    Ok(())
}
