//! Infinite feature selection and a linear SVM trained by projected
//! subgradient descent.
//!
//! Feature matrices are `samples × features` [`DenseTensor`]s.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{solve_linear, spectral_radius, DenseTensor, Prng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IfsConfig {
    pub alpha: f64,
    /// `r = r_frac / ρ(A)`.
    pub r_frac: f64,
    pub n_f_values: Vec<usize>,
}

impl Default for IfsConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            r_frac: 0.9,
            n_f_values: (310..=350).step_by(10).collect(),
        }
    }
}

impl IfsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        if !(self.r_frac > 0.0 && self.r_frac < 1.0) {
            return Err(Error::Config(format!("r_frac must lie in (0, 1), got {}", self.r_frac)));
        }
        if self.n_f_values.is_empty() || self.n_f_values.contains(&0) {
            return Err(Error::Config("n_f values must be positive and non-empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IfsResult {
    pub scores: Vec<f64>,
    /// Feature indices by descending score, ties by ascending index.
    pub ranking: Vec<usize>,
}

fn column(x: &DenseTensor, f: usize) -> Vec<f64> {
    (0..x.rows()).map(|s| x[(s, f)]).collect()
}

/// Population standard deviation; exactly zero for constant input.
fn std_dev(v: &[f64]) -> f64 {
    if v.iter().all(|x| *x == v[0]) {
        return 0.0;
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt()
}

/// Average ranks (1-based) with ties sharing their mean rank.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]).then(a.cmp(&b)));
    let mut ranks = vec![0.0; v.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && v[order[end]] == v[order[start]] {
            end += 1;
        }
        let avg = (start + end + 1) as f64 / 2.0;
        for &k in &order[start..end] {
            ranks[k] = avg;
        }
        start = end;
    }
    ranks
}

/// Spearman correlation matrix of the columns; rows/columns of constant
/// features are zero.
pub fn spearman_matrix(x: &DenseTensor) -> DenseTensor {
    let (samples, features) = (x.rows(), x.cols());
    // Standardized rank columns, stored feature-major.
    let mut z = vec![0.0; features * samples];
    let mut constant = vec![false; features];
    for f in 0..features {
        let r = average_ranks(&column(x, f));
        let mean = r.iter().sum::<f64>() / samples as f64;
        let norm = r.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>().sqrt();
        if norm == 0.0 {
            constant[f] = true;
            continue;
        }
        for (dst, v) in z[f * samples..(f + 1) * samples].iter_mut().zip(&r) {
            *dst = (v - mean) / norm;
        }
    }
    let mut out = DenseTensor::zeros(&[features, features]);
    for a in 0..features {
        if constant[a] {
            continue;
        }
        let za = &z[a * samples..(a + 1) * samples];
        out[(a, a)] = 1.0;
        for b in 0..a {
            if constant[b] {
                continue;
            }
            let zb = &z[b * samples..(b + 1) * samples];
            let rho: f64 = za.iter().zip(zb).map(|(p, q)| p * q).sum();
            let rho = rho.clamp(-1.0, 1.0);
            out[(a, b)] = rho;
            out[(b, a)] = rho;
        }
    }
    out
}

/// `A(i,j) = α·max(σ_i, σ_j)/max σ + (1 − α)(1 − |ρ_ij|)`; constant features
/// get zero rows and columns so they score zero.
pub fn affinity_matrix(x: &DenseTensor, alpha: f64) -> Result<DenseTensor> {
    if !x.is_matrix() || x.rows() < 2 || x.cols() < 2 {
        return Err(Error::shape(format!(
            "IFS needs at least 2 samples and 2 features, got {:?}",
            x.shape()
        )));
    }
    if !x.is_finite() {
        return Err(Error::Domain("feature matrix contains non-finite values".into()));
    }
    let features = x.cols();
    let sigma: Vec<f64> = (0..features).map(|f| std_dev(&column(x, f))).collect();
    let max_sigma = sigma.iter().copied().fold(0.0, f64::max);
    if max_sigma == 0.0 {
        return Err(Error::DegenerateInput("all features are constant".into()));
    }
    let rho = spearman_matrix(x);
    let mut a = DenseTensor::zeros(&[features, features]);
    for i in 0..features {
        if sigma[i] == 0.0 {
            continue;
        }
        for j in 0..features {
            if sigma[j] == 0.0 {
                continue;
            }
            let spread = sigma[i].max(sigma[j]) / max_sigma;
            a[(i, j)] = alpha * spread + (1.0 - alpha) * (1.0 - rho[(i, j)].abs());
        }
    }
    Ok(a)
}

/// Full energy matrix `(I − rA)⁻¹ − I`.
pub fn ifs_energy(a: &DenseTensor, r: f64) -> Result<DenseTensor> {
    let n = a.rows();
    let system = DenseTensor::identity(n).sub(&a.scale(r))?;
    let inv = solve_linear(&system, &DenseTensor::identity(n))?;
    inv.sub(&DenseTensor::identity(n))
}

fn rank_descending(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

/// Scores are row sums of the energy matrix, computed with a single solve
/// `(I − rA) y = 1`, `score = y − 1`.
pub fn ifs_rank(x: &DenseTensor, cfg: &IfsConfig) -> Result<IfsResult> {
    cfg.validate()?;
    let a = affinity_matrix(x, cfg.alpha)?;
    let rho = spectral_radius(&a)?;
    let r = cfg.r_frac / rho;
    let n = a.rows();
    let system = DenseTensor::identity(n).sub(&a.scale(r))?;
    let y = solve_linear(&system, &DenseTensor::filled(&[n, 1], 1.0))?;
    let scores: Vec<f64> = y.data().iter().map(|v| v - 1.0).collect();
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Domain("IFS produced non-finite scores".into()));
    }
    let ranking = rank_descending(&scores);
    Ok(IfsResult { scores, ranking })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmConfig {
    pub c: f64,
    pub iterations: usize,
    pub seed: u64,
    pub standardize: bool,
    /// Samples per subgradient step; `None` uses the full training set.
    pub batch_size: Option<usize>,
}

impl Default for SvmConfig {
    fn default() -> Self {
        Self {
            c: 1.0,
            iterations: 2000,
            seed: 0,
            standardize: true,
            batch_size: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvmModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    /// Training-set feature means and inverse standard deviations (zero for
    /// constant features).
    pub mean: Vec<f64>,
    pub inv_std: Vec<f64>,
}

impl SvmModel {
    pub fn decision(&self, x: &[f64]) -> f64 {
        let mut total = self.bias;
        for (k, v) in x.iter().enumerate() {
            total += self.weights[k] * (v - self.mean[k]) * self.inv_std[k];
        }
        total
    }

    pub fn predict(&self, x: &[f64]) -> i8 {
        if self.decision(x) >= 0.0 {
            1
        } else {
            -1
        }
    }

    pub fn accuracy(&self, x: &DenseTensor, y: &[i8]) -> f64 {
        let hits = (0..x.rows()).filter(|&s| self.predict(x.row(s)) == y[s]).count();
        hits as f64 / y.len() as f64
    }
}

/// Pegasos on `λ/2‖w‖² + mean hinge` with `λ = 1/(C·N)`, equivalent to
/// `½‖w‖² + C Σ hinge`. The bias is an extra weight on a constant feature.
pub fn svm_train(x: &DenseTensor, y: &[i8], cfg: &SvmConfig) -> Result<SvmModel> {
    if !x.is_matrix() || x.rows() != y.len() {
        return Err(Error::shape(format!(
            "svm_train: {:?} features for {} labels",
            x.shape(),
            y.len()
        )));
    }
    if !(cfg.c > 0.0 && cfg.c.is_finite()) {
        return Err(Error::Config(format!("C must be positive, got {}", cfg.c)));
    }
    if cfg.iterations == 0 {
        return Err(Error::Config("iterations must be positive".into()));
    }
    if !y.iter().any(|&l| l > 0) || !y.iter().any(|&l| l < 0) {
        return Err(Error::SingleClass);
    }
    let (samples, features) = (x.rows(), x.cols());
    let mut mean = vec![0.0; features];
    let mut inv_std = vec![1.0; features];
    if cfg.standardize {
        for f in 0..features {
            let col = column(x, f);
            let m = col.iter().sum::<f64>() / samples as f64;
            let sd = std_dev(&col);
            mean[f] = m;
            inv_std[f] = if sd > 0.0 { 1.0 / sd } else { 0.0 };
        }
    }
    // Scaled rows with the constant bias feature appended.
    let dim = features + 1;
    let mut z = vec![0.0; samples * dim];
    for s in 0..samples {
        let row = &mut z[s * dim..(s + 1) * dim];
        for f in 0..features {
            row[f] = (x[(s, f)] - mean[f]) * inv_std[f];
        }
        row[features] = 1.0;
    }
    let labels: Vec<f64> = y.iter().map(|&l| if l > 0 { 1.0 } else { -1.0 }).collect();

    let lambda = 1.0 / (cfg.c * samples as f64);
    let radius = 1.0 / lambda.sqrt();
    let mut rng = Prng::new(cfg.seed).split("svm");
    let batch = cfg.batch_size.unwrap_or(samples).clamp(1, samples);
    let mut w = vec![0.0; dim];
    let mut grad = vec![0.0; dim];
    let mut picks: Vec<usize> = (0..samples).collect();
    for t in 1..=cfg.iterations {
        if batch < samples {
            picks = (0..batch).map(|_| rng.index(samples)).collect();
        }
        grad.iter_mut().for_each(|g| *g = 0.0);
        for &s in &picks {
            let row = &z[s * dim..(s + 1) * dim];
            let margin = labels[s] * row.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
            if margin < 1.0 {
                for (g, v) in grad.iter_mut().zip(row) {
                    *g -= labels[s] * v;
                }
            }
        }
        let eta = 1.0 / (lambda * t as f64);
        let inv_batch = 1.0 / picks.len() as f64;
        for (wk, gk) in w.iter_mut().zip(&grad) {
            *wk -= eta * (lambda * *wk + gk * inv_batch);
        }
        let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > radius {
            let shrink = radius / norm;
            w.iter_mut().for_each(|v| *v *= shrink);
        }
    }
    let bias = w.pop().expect("bias weight");
    Ok(SvmModel {
        weights: w,
        bias,
        mean,
        inv_std,
    })
}
