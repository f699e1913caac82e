//! Acceptance suite. Runs every criterion at its stated tolerance and prints
//! one PASS/FAIL line each; exits nonzero if any fails. Pass criterion
//! numbers as arguments to run a subset.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use multiplex_forge::checkpoint::{decode, encode, load_checkpoint, save_checkpoint, Checkpoint};
use multiplex_forge::classify::{classify_cv, ClassifyConfig, Variant};
use multiplex_forge::data::{generate_synthetic, Subject, SynthConfig};
use multiplex_forge::discriminator::DiscriminatorConfig;
use multiplex_forge::gradcheck::{run_suite, GradCheckConfig, COMPONENTS};
use multiplex_forge::knn::{knn_mae_per_k, knn_predict, KnnConfig};
use multiplex_forge::multiplex::{convolve_same, inter_layer_conv, mae, BrainNetwork};
use multiplex_forge::select::{affinity_matrix, ifs_rank, IfsConfig};
use multiplex_forge::train::{train, TrainConfig};
use multiplex_forge::translator::{Noise, Tap, TranslatorConfig};
use multiplex_forge::{DenseTensor, Error, Prng};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

type Criterion = (&'static str, &'static str, fn() -> Outcome);

fn main() {
    let criteria: Vec<Criterion> = vec![
        ("1", "gradient suite", gradient_suite),
        ("2", "inter-layer convolution oracle", conv_oracle),
        ("3", "translation beats KNN", translation_beats_knn),
        ("3b", "no NaN over 400 default epochs", no_nan_over_400_epochs),
        ("4", "classification ordering", classification_ordering),
        ("5", "IFS correctness", ifs_correctness),
        ("6", "KNN exactness", knn_exactness),
        ("7", "null safety", null_safety),
        ("8", "determinism and persistence", determinism_and_persistence),
        ("9", "CLI golden path", cli_golden_path),
    ];
    let wanted: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (id, name, run) in criteria {
        if !wanted.is_empty() && !wanted.iter().any(|w| w == id) {
            continue;
        }
        let start = Instant::now();
        let o = run();
        let secs = start.elapsed().as_secs_f64();
        println!(
            "[{}] criterion {id}: {name} ({}) [{secs:.1} s]",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        if !o.pass {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

fn symmetric(rng: &mut Prng, n: usize) -> DenseTensor {
    let mut w = DenseTensor::zeros(&[n, n]);
    for i in 0..n {
        for j in 0..i {
            let v = rng.uniform();
            w[(i, j)] = v;
            w[(j, i)] = v;
        }
    }
    w
}

fn network(rng: &mut Prng, n: usize) -> BrainNetwork {
    BrainNetwork::new(symmetric(rng, n), "acc").unwrap()
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let rows = run_suite(&GradCheckConfig::default()).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let worst = rows.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    let covered = COMPONENTS
        .iter()
        .all(|c| rows.iter().filter(|r| r.component == *c).count() == 5);
    let pass = covered && worst < 1e-4 && rows.iter().all(|r| r.passed) && secs < 60.0;
    outcome(
        pass,
        format!("{} checks over {} components, max rel error {worst:.2e}, {secs:.2} s", rows.len(), COMPONENTS.len()),
    )
}

/// `out(a,b) = Σ_{p,q} S(p,q)·T(a−p+1, b−q+1)`, 1-based, zero outside.
fn brute_conv(s: &DenseTensor, t: &DenseTensor) -> DenseTensor {
    let n = s.rows();
    let mut out = DenseTensor::zeros(&[n, n]);
    for a in 1..=n as isize {
        for b in 1..=n as isize {
            let mut acc = 0.0;
            for p in 1..=n as isize {
                for q in 1..=n as isize {
                    let (r, c) = (a - p + 1, b - q + 1);
                    if r >= 1 && r <= n as isize && c >= 1 && c <= n as isize {
                        acc += s[((p - 1) as usize, (q - 1) as usize)] * t[((r - 1) as usize, (c - 1) as usize)];
                    }
                }
            }
            out[((a - 1) as usize, (b - 1) as usize)] = acc;
        }
    }
    out
}

fn conv_oracle() -> Outcome {
    let mut rng = Prng::new(2);
    let (mut worst, mut asym) = (0.0f64, 0.0f64);
    for n in [2, 5, 35] {
        for _ in 0..100 {
            let (s, t) = (network(&mut rng, n), network(&mut rng, n));
            let fast = inter_layer_conv(&s, &t).unwrap();
            let slow = brute_conv(s.weights(), t.weights());
            worst = worst.max(fast.sub(&slow).unwrap().max_abs());
            asym = asym.max(fast.sub(&fast.transpose().unwrap()).unwrap().max_abs());
        }
    }
    let s = DenseTensor::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
    let t = DenseTensor::from_rows(&[vec![0.0, 2.0], vec![2.0, 0.0]]).unwrap();
    let hand = convolve_same(&s, &t).unwrap();
    let hand_ok = hand.data() == [0.0, 0.0, 0.0, 4.0];
    outcome(
        worst <= 1e-12 && asym <= 1e-12 && hand_ok,
        format!("300 pairs, max |fast - brute| {worst:.1e}, max asymmetry {asym:.1e}, hand case {:?}", hand.data()),
    )
}

fn held_out_split(d: &[Subject]) -> (Vec<Subject>, Vec<Subject>) {
    let train = d.iter().step_by(2).cloned().collect();
    let test = d.iter().skip(1).step_by(2).cloned().collect();
    (train, test)
}

fn pairs(s: &[Subject]) -> Vec<(&BrainNetwork, &BrainNetwork)> {
    s.iter().map(|x| (&x.source, x.target.as_ref().unwrap())).collect()
}

fn translation_beats_knn() -> Outcome {
    let start = Instant::now();
    let d = generate_synthetic(&SynthConfig::default()).unwrap();
    let (train_set, test_set) = held_out_split(&d.subjects);
    let cfg = TrainConfig {
        epochs: 100,
        ..TrainConfig::default()
    };
    let out = train(&train_set, &TranslatorConfig::new(d.n), &DiscriminatorConfig::new(d.n), &cfg).unwrap();
    let test = pairs(&test_set);
    let ggan = test
        .iter()
        .map(|(s, t)| mae(&out.translator.translate(s, Noise::Zero, Tap::None).unwrap().predicted, t).unwrap())
        .sum::<f64>()
        / test.len() as f64;
    let per_k = knn_mae_per_k(&pairs(&train_set), &test, &KnnConfig::default()).unwrap();
    let knn = per_k.iter().map(|x| x.1).sum::<f64>() / per_k.len() as f64;
    let ratio = ggan / knn;
    let secs = start.elapsed().as_secs_f64();
    outcome(
        ratio <= 0.8 && secs < 900.0,
        format!(
            "held-out G-GAN MAE {ggan:.5} vs mean KNN MAE {knn:.5}, ratio {ratio:.3} (<= 0.8) after {} epochs",
            cfg.epochs
        ),
    )
}

fn no_nan_over_400_epochs() -> Outcome {
    let d = generate_synthetic(&SynthConfig::default()).unwrap();
    let (train_set, test_set) = held_out_split(&d.subjects);
    let cfg = TrainConfig {
        epochs: 400,
        ..TrainConfig::default()
    };
    let out = train(&train_set, &TranslatorConfig::new(d.n), &DiscriminatorConfig::new(d.n), &cfg).unwrap();
    let finite_trace = out
        .trace
        .iter()
        .all(|e| e.loss_d.is_finite() && e.loss_t_adv.is_finite() && e.loss_l1.is_finite());
    let finite_pred = test_set.iter().all(|s| {
        let p = out.translator.translate(&s.source, Noise::Zero, Tap::None).unwrap().predicted;
        p.weights().is_finite()
    });
    let last = out.trace.last().unwrap();
    outcome(
        finite_trace && finite_pred && out.trace.len() == 400,
        format!(
            "{} epochs, final loss_d {:.4}, loss_l1 {:.3}, all losses and predictions finite: {}",
            out.trace.len(),
            last.loss_d,
            last.loss_l1,
            finite_trace && finite_pred
        ),
    )
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn classification_ordering() -> Outcome {
    let d = generate_synthetic(&SynthConfig {
        delta: 0.07,
        target_delta: 0.3,
        ..SynthConfig::default()
    })
    .unwrap();
    let variants = [Variant::SourceOnly, Variant::PredictedMultiplex, Variant::GroundTruthMultiplex];
    let mut acc = vec![Vec::new(); 3];
    for seed in 1..=3 {
        let mut cfg = ClassifyConfig::new(d.n);
        cfg.seed = seed;
        cfg.train = TrainConfig {
            epochs: 400,
            lr_t: 1e-3,
            d_steps_per_g_step: 0,
            ..TrainConfig::default()
        };
        let report = classify_cv(&d, &variants, &cfg).unwrap();
        for (k, v) in variants.iter().enumerate() {
            acc[k].push(report.variant(*v).unwrap().sweep_mean);
        }
    }
    let (src, pred, truth) = (mean(&acc[0]), mean(&acc[1]), mean(&acc[2]));
    let calibrated = (0.65..=0.75).contains(&src);
    outcome(
        calibrated && pred >= src + 0.05 && truth >= pred - 0.02,
        format!("3-seed means: source_only {src:.3}, predicted_multiplex {pred:.3}, ground_truth_multiplex {truth:.3}"),
    )
}

fn power_radius(a: &DenseTensor) -> f64 {
    let n = a.rows();
    let mut v = vec![1.0 / (n as f64).sqrt(); n];
    let mut lambda = 0.0;
    for _ in 0..5000 {
        let w: Vec<f64> = (0..n).map(|i| (0..n).map(|j| a[(i, j)] * v[j]).sum()).collect();
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        lambda = norm;
        v = w.into_iter().map(|x| x / norm).collect();
    }
    lambda
}

/// Row sums of `Σ_{l=1}^{terms} (rA)^l`.
fn series_scores(a: &DenseTensor, r: f64, terms: usize) -> Vec<f64> {
    let n = a.rows();
    let mut v = vec![1.0; n];
    let mut total = vec![0.0; n];
    for _ in 0..terms {
        v = (0..n).map(|i| r * (0..n).map(|j| a[(i, j)] * v[j]).sum::<f64>()).collect();
        for (t, x) in total.iter_mut().zip(&v) {
            *t += x;
        }
    }
    total
}

fn ifs_correctness() -> Outcome {
    let mut rng = Prng::new(5);
    let (rows, cols) = (30, 50);
    let data: Vec<f64> = (0..rows * cols).map(|_| rng.normal()).collect();
    let x = DenseTensor::from_vec(&[rows, cols], data).unwrap();
    let a = affinity_matrix(&x, IfsConfig::default().alpha).unwrap();
    let rho = power_radius(&a);
    let rel = |r_frac: f64, terms: usize| {
        let cfg = IfsConfig {
            r_frac,
            ..IfsConfig::default()
        };
        let closed = ifs_rank(&x, &cfg).unwrap().scores;
        let series = series_scores(&a, r_frac / rho, terms);
        closed
            .iter()
            .zip(&series)
            .map(|(c, s)| (c - s).abs() / s.abs())
            .fold(0.0, f64::max)
    };
    let err50 = rel(0.5, 50);
    let err_default = rel(IfsConfig::default().r_frac, 400);

    let perm = rng.permutation(cols);
    let moved_rows: Vec<Vec<f64>> = (0..rows).map(|s| perm.iter().map(|&c| x.row(s)[c]).collect()).collect();
    let moved = DenseTensor::from_rows(&moved_rows).unwrap();
    let base = ifs_rank(&x, &IfsConfig::default()).unwrap().ranking;
    let mapped: Vec<usize> = ifs_rank(&moved, &IfsConfig::default())
        .unwrap()
        .ranking
        .iter()
        .map(|&c| perm[c])
        .collect();
    let equivariant = mapped == base;
    outcome(
        err50 < 1e-8 && err_default < 1e-8 && equivariant,
        format!(
            "rel err vs 50-term series (r_frac 0.5) {err50:.1e}, vs 400-term series (r_frac 0.9) {err_default:.1e}, permutation equivariant: {equivariant}"
        ),
    )
}

fn knn_exactness() -> Outcome {
    let mut rng = Prng::new(6);
    let nets: Vec<(BrainNetwork, BrainNetwork)> = (0..12).map(|_| (network(&mut rng, 7), network(&mut rng, 7))).collect();
    let train_set: Vec<_> = nets.iter().map(|(s, t)| (s, t)).collect();
    let retrieved = nets.iter().all(|(s, t)| knn_predict(&train_set, s, 1).unwrap().weights() == t.weights());

    let mut worst = 0.0f64;
    for _ in 0..50 {
        let count = 3 + rng.index(15);
        let n = 3 + rng.index(8);
        let data: Vec<(BrainNetwork, BrainNetwork)> =
            (0..count).map(|_| (network(&mut rng, n), network(&mut rng, n))).collect();
        let query = network(&mut rng, n);
        let k = 1 + rng.index(count);
        let train_set: Vec<_> = data.iter().map(|(s, t)| (s, t)).collect();
        let got = knn_predict(&train_set, &query, k).unwrap();

        let mut dist: Vec<(f64, usize)> = data
            .iter()
            .enumerate()
            .map(|(idx, (s, _))| {
                let mut d = 0.0;
                for i in 0..n {
                    for j in i + 1..n {
                        d += (s.weights()[(i, j)] - query.weights()[(i, j)]).powi(2);
                    }
                }
                (d.sqrt(), idx)
            })
            .collect();
        dist.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        let mut want = DenseTensor::zeros(&[n, n]);
        for &(_, idx) in &dist[..k] {
            want = want.add(data[idx].1.weights()).unwrap();
        }
        let want = want.scale(1.0 / k as f64);
        worst = worst.max(got.weights().sub(&want).unwrap().max_abs());
    }
    outcome(
        retrieved && worst <= 1e-12,
        format!("K=1 self retrieval bitwise: {retrieved}; 50 brute-force instances, max gap {worst:.1e}"),
    )
}

fn null_safety() -> Outcome {
    let variants = [Variant::SourceOnly, Variant::GroundTruthMultiplex];
    let mut acc = vec![Vec::new(); variants.len()];
    for seed in 1..=10 {
        let d = generate_synthetic(&SynthConfig {
            seed,
            ..SynthConfig::default()
        })
        .unwrap()
        .with_shuffled_labels(&mut Prng::new(seed));
        let mut cfg = ClassifyConfig::new(d.n);
        cfg.seed = seed;
        let report = classify_cv(&d, &variants, &cfg).unwrap();
        for (k, v) in variants.iter().enumerate() {
            acc[k].push(report.variant(*v).unwrap().sweep_mean);
        }
    }
    let means: Vec<f64> = acc.iter().map(|a| mean(a)).collect();
    outcome(
        means.iter().all(|m| (0.35..=0.65).contains(m)),
        format!(
            "label-shuffled, 10 seeds: source_only {:.3}, ground_truth_multiplex {:.3}",
            means[0], means[1]
        ),
    )
}

fn determinism_and_persistence() -> Outcome {
    let d = generate_synthetic(&SynthConfig {
        subjects: 20,
        n: 10,
        signal_nodes: 4,
        ..SynthConfig::default()
    })
    .unwrap();
    let (tc, dc) = (TranslatorConfig::new(d.n), DiscriminatorConfig::new(d.n));
    let cfg = TrainConfig {
        epochs: 6,
        seed: 11,
        ..TrainConfig::default()
    };
    let a = train(&d.subjects, &tc, &dc, &cfg).unwrap();
    let b = train(&d.subjects, &tc, &dc, &cfg).unwrap();
    let bits = |t: &[multiplex_forge::train::EpochLoss]| -> Vec<[u64; 3]> {
        t.iter()
            .map(|e| [e.loss_d.to_bits(), e.loss_t_adv.to_bits(), e.loss_l1.to_bits()])
            .collect()
    };
    let traces = bits(&a.trace) == bits(&b.trace);

    let mut ccfg = ClassifyConfig::new(d.n);
    ccfg.ifs.n_f_values = vec![10, 20, 40];
    ccfg.train.epochs = 3;
    ccfg.seed = 4;
    let r1 = serde_json::to_string(&classify_cv(&d, &Variant::ALL, &ccfg).unwrap()).unwrap();
    let r2 = serde_json::to_string(&classify_cv(&d, &Variant::ALL, &ccfg).unwrap()).unwrap();
    let reports = r1 == r2;

    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("m.ggan");
    let ck = Checkpoint {
        translator: a.translator.clone(),
        discriminator: a.discriminator.clone(),
        train: Some(cfg.clone()),
        seed: cfg.seed,
    };
    save_checkpoint(&ck, &path).unwrap();
    let back = load_checkpoint(&path).unwrap();
    let translate_bitwise = d.subjects.iter().all(|s| {
        let p = ck.translator.translate(&s.source, Noise::Zero, Tap::PostRelu).unwrap();
        let q = back.translator.translate(&s.source, Noise::Zero, Tap::PostRelu).unwrap();
        let (mut r1, mut r2) = (Prng::new(3), Prng::new(3));
        let pn = ck.translator.translate(&s.source, Noise::Sample(&mut r1), Tap::None).unwrap();
        let qn = back.translator.translate(&s.source, Noise::Sample(&mut r2), Tap::None).unwrap();
        p.predicted.weights().data() == q.predicted.weights().data()
            && p.tap == q.tap
            && pn.predicted.weights().data() == qn.predicted.weights().data()
    });

    let mut bytes = encode(&ck).unwrap();
    let at = bytes.len() - 100;
    bytes[at] ^= 0x01;
    let corrupt = matches!(decode(&bytes), Err(Error::ChecksumMismatch { .. }));
    outcome(
        traces && reports && translate_bitwise && corrupt,
        format!(
            "traces bitwise: {traces}; classify reports identical: {reports}; save/load/translate bitwise: {translate_bitwise}; corruption detected: {corrupt}"
        ),
    )
}

fn cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_multiplex-forge"))
        .env_remove("MULTIPLEX_FORGE_THREADS")
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!(
            "{} exited {:?}: {}",
            args[0],
            out.status.code(),
            String::from_utf8_lossy(&out.stderr).trim()
        ))
    }
}

fn read_csv(path: &Path) -> Result<Vec<Vec<String>>, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let rows: Vec<Vec<String>> = text.lines().map(|l| l.split(',').map(String::from).collect()).collect();
    if rows.is_empty() || rows.iter().any(|r| r.len() != rows[0].len()) {
        return Err(format!("{}: ragged or empty", path.display()));
    }
    Ok(rows)
}

fn read_json(path: &Path) -> Result<serde_json::Value, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn check(cond: bool, what: &str) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(what.to_string())
    }
}

fn finite_column(rows: &[Vec<String>], col: usize) -> bool {
    rows[1..]
        .iter()
        .all(|r| r[col].parse::<f64>().map(f64::is_finite).unwrap_or(false))
}

fn run_report_ok(path: &Path, command: &str) -> Result<(), String> {
    let v = read_json(path)?;
    check(
        v["command"] == command
            && v["format_version"].is_u64()
            && v["seed"].is_u64()
            && v["config"].is_object()
            && v["metrics"].is_object()
            && v["wall_time_s"].as_f64().is_some_and(f64::is_finite),
        &format!("{} is not a valid run report", path.display()),
    )
}

const GOLDEN_EPOCHS: &str = "100";

fn golden_path(dir: &Path) -> Result<String, String> {
    let p = |name: &str| dir.join(name).to_str().unwrap().to_string();
    let (data, tr, ev, cl, mk) = (p("data"), p("train"), p("eval"), p("classify"), p("markers"));
    cli(&["synth", "--subjects", "40", "--out", &data])?;
    cli(&["train", "--data", &data, "--out", &tr, "--epochs", GOLDEN_EPOCHS])?;
    let ckpt = format!("{tr}/checkpoint.ggan");
    cli(&["evaluate", "--data", &data, "--ckpt", &ckpt, "--out", &ev])?;
    cli(&["classify", "--data", &data, "--out", &cl, "--epochs", GOLDEN_EPOCHS])?;
    cli(&["markers", "--report", &cl, "--out", &mk])?;

    let trace = read_csv(&dir.join("train/trace.csv"))?;
    check(trace[0] == ["epoch", "loss_d", "loss_t_adv", "loss_l1"], "trace header")?;
    check(trace.len() == 1 + GOLDEN_EPOCHS.parse::<usize>().unwrap(), "trace rows")?;
    check((1..4).all(|c| finite_column(&trace, c)), "trace values finite")?;
    run_report_ok(&dir.join("train/run.json"), "train")?;

    let maes = read_csv(&dir.join("eval/mae.csv"))?;
    check(maes[0] == ["method", "k", "mae"] && finite_column(&maes, 2), "mae.csv schema")?;
    check(maes[1][0] == "ggan" && maes.last().unwrap()[..2] == ["knn", "mean"], "mae.csv rows")?;
    check(maes.len() == 1 + 1 + 9 + 1, "mae.csv has one row per K")?;
    run_report_ok(&dir.join("eval/run.json"), "evaluate")?;

    let acc = read_csv(&dir.join("classify/accuracy.csv"))?;
    check(acc[0][..3] == ["variant", "n_f", "mean_accuracy"], "accuracy.csv header")?;
    check((2..acc[0].len()).all(|c| finite_column(&acc, c)), "accuracies finite")?;
    for v in Variant::ALL {
        let nf: Vec<&str> = acc.iter().filter(|r| r[0] == v.name()).map(|r| r[1].as_str()).collect();
        check(nf == ["310", "320", "330", "340", "350"], &format!("{} rows", v.name()))?;
    }
    let report = read_json(&dir.join("classify/classify.json"))?;
    check(report["variants"].as_array().is_some_and(|v| v.len() == 5), "classify.json variants")?;
    run_report_ok(&dir.join("classify/run.json"), "classify")?;

    let markers = read_csv(&dir.join("markers/markers.csv"))?;
    check(markers.len() == 11 && finite_column(&markers, 7), "markers.csv has ten scored rows")?;
    let scores: Vec<f64> = markers[1..].iter().map(|r| r[7].parse().unwrap()).collect();
    check(scores.windows(2).all(|w| w[0] >= w[1]), "marker scores non-increasing")?;
    run_report_ok(&dir.join("markers/run.json"), "markers")?;

    let sweep: Vec<String> = report["variants"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| format!("{} {:.3}", v["variant"].as_str().unwrap(), v["sweep_mean"].as_f64().unwrap()))
        .collect();
    Ok(sweep.join(", "))
}

fn cli_golden_path() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let result = golden_path(tmp.path());
    let secs = start.elapsed().as_secs_f64();
    match result {
        Ok(summary) => outcome(
            secs < 300.0,
            format!("synth -> train -> evaluate -> classify -> markers on 40 subjects in {secs:.0} s (< 300); {summary}"),
        ),
        Err(e) => outcome(false, e),
    }
}
